"""Catalog and interaction-data ingestion.

Input formats:
  * items file: JSON Lines, one record per line with fields
    ``external_id``, ``title``, optional ``aux_text``.
  * interactions file: CSV with a required header row and columns
    ``user``, ``item``, ``rating``, ``timestamp`` (extra columns ignored).
  * split output: JSON Lines, one record per sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence

from .errors import CatalogError, DeepRecError
from .protocol import normalize_title
from .records import loads_record


@dataclass(frozen=True)
class ItemRecord:
    item_id: int
    external_id: str
    title: str
    aux_text: Optional[str] = None


class Catalog:
    """Immutable item universe with dense 0-based ids and a title index."""

    def __init__(self, items: Sequence[ItemRecord]):
        if not items:
            raise CatalogError("catalog must contain at least one item")
        self.items: tuple[ItemRecord, ...] = tuple(items)
        self._by_normalized_title: dict[str, int] = {}
        self._by_external_id: dict[str, int] = {}
        for item in self.items:
            if item.item_id != len(self._by_external_id):
                raise CatalogError(
                    f"item ids must be contiguous from 0; got {item.item_id}"
                )
            norm = normalize_title(item.title)
            if not norm:
                raise CatalogError(f"item {item.item_id} has an empty title")
            if norm in self._by_normalized_title:
                other = self._by_normalized_title[norm]
                raise CatalogError(
                    f"duplicate title {item.title!r}: items {other} "
                    f"({self.items[other].external_id!r}) and {item.item_id} "
                    f"({item.external_id!r}) normalize to the same form"
                )
            self._by_normalized_title[norm] = item.item_id
            self._by_external_id[item.external_id] = item.item_id

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: int) -> bool:
        return 0 <= item_id < len(self.items)

    def title_of(self, item_id: int) -> str:
        return self.items[item_id].title

    def id_for_normalized_title(self, norm: str) -> Optional[int]:
        return self._by_normalized_title.get(norm)

    def id_for_external(self, external_id: str) -> Optional[int]:
        return self._by_external_id.get(external_id)


def load_catalog(items_file: str | Path) -> Catalog:
    """Load the items file; duplicate normalized titles are a hard error."""
    items: list[ItemRecord] = []
    with open(items_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = loads_record(line)
                external_id = str(record["external_id"])
                title = str(record["title"])
            except (ValueError, KeyError, TypeError) as exc:
                raise CatalogError(
                    f"{items_file}: malformed item record on line {lineno}: {exc}"
                ) from exc
            items.append(
                ItemRecord(
                    item_id=len(items),
                    external_id=external_id,
                    title=title,
                    aux_text=record.get("aux_text"),
                )
            )
    return Catalog(items)


@dataclass
class InteractionSequence:
    user_id: str
    items: list[int]
    timestamps: Optional[list[int]] = None

    def to_record(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "items": self.items,
            "timestamps": self.timestamps,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "InteractionSequence":
        return cls(
            user_id=str(record["user_id"]),
            items=[int(i) for i in record["items"]],
            timestamps=record.get("timestamps"),
        )


@dataclass
class IngestReport:
    raw_records: int = 0
    dropped_low_rating: int = 0
    unknown_item: int = 0
    removed_kcore_interactions: int = 0
    kcore_rounds: int = 0
    users_kept: int = 0
    truncated_users: int = 0

    def to_record(self) -> dict[str, Any]:
        return {
            "raw_records": self.raw_records,
            "dropped_low_rating": self.dropped_low_rating,
            "unknown_item": self.unknown_item,
            "removed_kcore_interactions": self.removed_kcore_interactions,
            "kcore_rounds": self.kcore_rounds,
            "users_kept": self.users_kept,
            "truncated_users": self.truncated_users,
        }


def read_interactions_csv(path: str | Path) -> Iterator[tuple[str, str, float, int]]:
    """Yield (user, external item id, rating, timestamp) rows."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"user", "item", "rating", "timestamp"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise DeepRecError(
                f"{path}: interactions file needs a header row with columns "
                f"user,item,rating,timestamp (got {reader.fieldnames})"
            )
        for row in reader:
            yield (
                row["user"],
                row["item"],
                float(row["rating"]),
                int(row["timestamp"]),
            )


def ingest_interactions(
    raw_records: Iterable[tuple[str, str, float, int]],
    catalog: Catalog,
    min_count: int = 5,
    min_rating: float = 3.0,
    max_len: int = 20,
) -> tuple[list[InteractionSequence], IngestReport]:
    """Filter, k-core prune, and assemble per-user interaction sequences.

    Keeps interactions with rating strictly above ``min_rating``, then
    iterates user and item count filters until a fixpoint so every
    surviving user and item has at least ``min_count`` interactions.
    Sequences are time-ordered (input order breaks timestamp ties) and
    truncated to the most recent ``max_len`` items.
    """
    report = IngestReport()
    rows: list[tuple[str, int, int, int]] = []  # (user, item_id, ts, input order)
    for order, (user, external_item, rating, ts) in enumerate(raw_records):
        report.raw_records += 1
        if rating <= min_rating:
            report.dropped_low_rating += 1
            continue
        item_id = catalog.id_for_external(str(external_item))
        if item_id is None:
            report.unknown_item += 1
            continue
        rows.append((str(user), item_id, int(ts), order))

    before = len(rows)
    while True:
        report.kcore_rounds += 1
        user_counts: dict[str, int] = {}
        item_counts: dict[int, int] = {}
        for user, item_id, _, _ in rows:
            user_counts[user] = user_counts.get(user, 0) + 1
            item_counts[item_id] = item_counts.get(item_id, 0) + 1
        kept = [
            row
            for row in rows
            if user_counts[row[0]] >= min_count and item_counts[row[1]] >= min_count
        ]
        if len(kept) == len(rows):
            break
        rows = kept
    report.removed_kcore_interactions = before - len(rows)

    by_user: dict[str, list[tuple[str, int, int, int]]] = {}
    for row in rows:
        by_user.setdefault(row[0], []).append(row)

    sequences: list[InteractionSequence] = []
    for user in sorted(by_user):
        user_rows = sorted(by_user[user], key=lambda r: (r[2], r[3]))
        if len(user_rows) > max_len:
            user_rows = user_rows[-max_len:]
            report.truncated_users += 1
        sequences.append(
            InteractionSequence(
                user_id=user,
                items=[r[1] for r in user_rows],
                timestamps=[r[2] for r in user_rows],
            )
        )
    report.users_kept = len(sequences)
    return sequences, report


@dataclass
class SplitSample:
    user_id: str
    history: list[int]
    label: int
    split: str  # train | valid | test
    difficulty_rank: Optional[int] = None

    def to_record(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "history": self.history,
            "label": self.label,
            "split": self.split,
            "difficulty_rank": self.difficulty_rank,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "SplitSample":
        return cls(
            user_id=str(record["user_id"]),
            history=[int(i) for i in record["history"]],
            label=int(record["label"]),
            split=str(record["split"]),
            difficulty_rank=record.get("difficulty_rank"),
        )


def split_leave_one_out(sequences: Iterable[InteractionSequence]) -> list[SplitSample]:
    """Hold out the last item for test and the second-to-last for valid.

    Train samples are every prefix->next pair over the first n-1 items, so
    the longest train pair coincides with the valid pair. Length-2
    sequences yield only a valid sample; length-1 sequences yield nothing.
    """
    samples: list[SplitSample] = []
    for seq in sequences:
        items = seq.items
        n = len(items)
        if n < 2:
            continue
        for k in range(1, n - 1):
            samples.append(SplitSample(seq.user_id, items[:k], items[k], "train"))
        if n == 2:
            samples.append(SplitSample(seq.user_id, items[:1], items[1], "valid"))
        else:
            samples.append(
                SplitSample(seq.user_id, items[: n - 2], items[n - 2], "valid")
            )
            samples.append(
                SplitSample(seq.user_id, items[: n - 1], items[n - 1], "test")
            )
    return samples


def select_by_difficulty(
    samples: Sequence[SplitSample],
    index: Any,
    max_rank: int = 100,
    mask_history: bool = True,
) -> list[SplitSample]:
    """Keep samples whose label the retriever ranks within ``max_rank``.

    Rank uses the history-only encoding (no preference text) over the full
    item space; the history is masked except for the label itself so
    repurchase labels stay rankable. Unknown labels are a hard error.
    """
    kept: list[SplitSample] = []
    for sample in samples:
        vec = index.encode_history(sample.history, user_id=sample.user_id)
        mask = (set(sample.history) - {sample.label}) if mask_history else None
        rank = index.rank_of(vec, sample.label, mask=mask)
        if rank <= max_rank:
            kept.append(
                SplitSample(
                    user_id=sample.user_id,
                    history=list(sample.history),
                    label=sample.label,
                    split=sample.split,
                    difficulty_rank=rank,
                )
            )
    return kept
