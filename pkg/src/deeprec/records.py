"""JSON record serialization used by every file format and HTTP body.

One format everywhere: a record is a JSON object with a fixed key order,
files are JSON Lines (one record per line, UTF-8, LF), and HTTP bodies are
single records. Key order is the dataclass field order of whatever produced
the record, so serialization is byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable, Iterator


def dumps_record(record: dict[str, Any]) -> str:
    """Serialize one record compactly, preserving key insertion order."""
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def loads_record(line: str) -> dict[str, Any]:
    return json.loads(line)


def write_records(path: str | Path, records: Iterable[dict[str, Any]]) -> int:
    """Atomically write records as JSON Lines; returns the record count.

    Writes to a sibling temp file and renames, so a crashed run never leaves
    a half-written output behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    n = 0
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")
            n += 1
    os.replace(tmp, path)
    return n


def read_records(path: str | Path) -> Iterator[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield loads_record(line)


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
