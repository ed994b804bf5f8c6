"""Tagged interaction format: streaming parser, validation, and rendering.

The policy and the retriever talk through eight literal tags. The parser is
total: any byte sequence parses into an event stream whose payloads
concatenate back to the input exactly; structural defects are reported as
flags on a FormatReport, never as exceptions, because reward computation
must be able to score malformed output.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
PREF_OPEN = "<|begin_of_preference|>"
PREF_CLOSE = "<|end_of_preference|>"
ITEMS_OPEN = "<|begin_of_item_list|>"
ITEMS_CLOSE = "<|end_of_item_list|>"
REC_OPEN = "<recommendation_list>"
REC_CLOSE = "</recommendation_list>"

#: All eight tag literals, pairwise distinct, none a substring of another.
ALL_TAGS = (
    THINK_OPEN,
    THINK_CLOSE,
    PREF_OPEN,
    PREF_CLOSE,
    ITEMS_OPEN,
    ITEMS_CLOSE,
    REC_OPEN,
    REC_CLOSE,
)

_MAX_TAG_LEN = max(len(t) for t in ALL_TAGS)

_NUMBER_PREFIX = re.compile(r"^\s*\d+\.\s+")

_SYSTEM_PROMPT_TEMPLATE = """You are a recommendation assistant. You cannot see the item catalog \
directly: to obtain candidate items you must call the retrieval tool by \
writing a description of the user's preference between {pref_open} and \
{pref_close}. The tool answers with a ranked item list enclosed in \
{items_open} and {items_close}. The user message lists previously \
interacted items in chronological order. Reason inside {think_open} ... \
{think_close}: analyze the interaction history, call the retrieval tool as \
many times as useful (at least once), and vary your preference descriptions \
between calls to explore different facets of the user's taste. You may only \
recommend items that the tool returned. When done reasoning, close the \
think block and output the final ranked list of exactly the top-{K} item \
titles, one title per line, between {rec_open} and {rec_close}."""


class EventKind(str, Enum):
    THINK_OPEN = "ThinkOpen"
    THINK_CLOSE = "ThinkClose"
    PREF_OPEN = "PrefOpen"
    PREF_TEXT = "PrefText"
    PREF_CLOSE = "PrefClose"
    ITEMS_OPEN = "ItemsOpen"
    ITEMS_CLOSE = "ItemsClose"
    REC_OPEN = "RecOpen"
    REC_LINE = "RecLine"
    REC_CLOSE = "RecClose"
    PLAIN_TEXT = "PlainText"


class StopSignal(str, Enum):
    AT_PREF_CLOSE = "AtPrefClose"
    AT_REC_CLOSE = "AtRecClose"


_TAG_EVENT_KIND = {
    THINK_OPEN: EventKind.THINK_OPEN,
    THINK_CLOSE: EventKind.THINK_CLOSE,
    PREF_OPEN: EventKind.PREF_OPEN,
    PREF_CLOSE: EventKind.PREF_CLOSE,
    ITEMS_OPEN: EventKind.ITEMS_OPEN,
    ITEMS_CLOSE: EventKind.ITEMS_CLOSE,
    REC_OPEN: EventKind.REC_OPEN,
    REC_CLOSE: EventKind.REC_CLOSE,
}


@dataclass(frozen=True)
class ParseEvent:
    """One parsed unit. ``payload`` is the exact slice raw[start:end]."""

    kind: EventKind
    payload: str
    start: int
    end: int


@dataclass(frozen=True)
class FeedResult:
    events: tuple[ParseEvent, ...]
    stop: Optional[StopSignal]
    #: Characters of this chunk that were consumed. Equal to len(chunk)
    #: unless a stop tag completed mid-chunk; the caller decides whether
    #: to re-feed the remainder.
    consumed: int


def normalize_title(s: str) -> str:
    """Canonical title form: NFC, case-folded, whitespace collapsed."""
    s = unicodedata.normalize("NFC", s)
    s = " ".join(s.casefold().split())
    return unicodedata.normalize("NFC", s)


def strip_numbering(line: str) -> str:
    """Drop a leading "N. " rank prefix as used in injected item lists."""
    return _NUMBER_PREFIX.sub("", line, count=1)


def render_system_prompt(k: int) -> str:
    """System prompt instructing the policy on the interaction protocol."""
    if k < 1:
        raise ValueError(f"final list length must be >= 1, got {k}")
    return _SYSTEM_PROMPT_TEMPLATE.format(
        K=k,
        think_open=THINK_OPEN,
        think_close=THINK_CLOSE,
        pref_open=PREF_OPEN,
        pref_close=PREF_CLOSE,
        items_open=ITEMS_OPEN,
        items_close=ITEMS_CLOSE,
        rec_open=REC_OPEN,
        rec_close=REC_CLOSE,
    )


def inject_item_list(items: Sequence[Any]) -> str:
    """Render retrieved items as the injected block, numbered in rank order.

    ``items`` may be ItemRecord-like objects (``.title``) or plain strings.
    """
    if not items:
        raise ValueError("cannot inject an empty item list")
    lines = []
    for i, item in enumerate(items, start=1):
        title = item if isinstance(item, str) else item.title
        lines.append(f"{i}. {title}\n")
    return ITEMS_OPEN + "\n" + "".join(lines) + ITEMS_CLOSE


def _find_earliest_tag(data: str, pos: int) -> tuple[Optional[int], Optional[str]]:
    best_idx: Optional[int] = None
    best_tag: Optional[str] = None
    for tag in ALL_TAGS:
        i = data.find(tag, pos)
        if i != -1 and (best_idx is None or i < best_idx):
            best_idx, best_tag = i, tag
    return best_idx, best_tag


def _partial_tag_suffix_len(data: str, floor: int) -> int:
    """Length of the longest suffix of data (not crossing ``floor``)
    that is a proper prefix of some tag literal."""
    max_len = min(_MAX_TAG_LEN - 1, len(data) - floor)
    for length in range(max_len, 0, -1):
        suffix = data[len(data) - length :]
        for tag in ALL_TAGS:
            if tag.startswith(suffix):
                return length
    return 0


class StreamParser:
    """Incremental parser over one text stream.

    Stateful and single-stream: use one instance per episode. Chunk
    boundaries are arbitrary; the emitted event sequence depends only on
    the concatenated input (chunking invariance). Text runs are one event
    per run, except inside item-list and recommendation-list regions where
    runs split at newlines so each listed line is its own event.
    """

    def __init__(self) -> None:
        self._pending = ""
        self._start = 0  # absolute offset of _pending[0]
        self._region = "plain"  # plain | pref | items | rec
        self._finished = False

    @property
    def offset(self) -> int:
        """Absolute offset up to which input has been consumed or buffered."""
        return self._start + len(self._pending)

    def feed(self, chunk: str) -> FeedResult:
        if self._finished:
            raise RuntimeError("parser already finished")
        data = self._pending + chunk
        base = self._start
        pending_len = len(self._pending)
        events: list[ParseEvent] = []
        pos = 0
        while True:
            idx, tag = _find_earliest_tag(data, pos)
            if idx is None:
                break
            self._emit_text(events, data, base, pos, idx, terminal=True)
            end = idx + len(tag)
            events.append(
                ParseEvent(_TAG_EVENT_KIND[tag], tag, base + idx, base + end)
            )
            pos = end
            stop = self._transition(tag)
            if stop is not None:
                self._pending = ""
                self._start = base + pos
                return FeedResult(tuple(events), stop, pos - pending_len)
        hold = _partial_tag_suffix_len(data, pos)
        tail = len(data) - hold
        if self._region in ("items", "rec"):
            # complete lines can go out now; the partial line waits
            last_nl = data.rfind("\n", pos, tail)
            if last_nl != -1:
                self._emit_text(events, data, base, pos, last_nl + 1, terminal=False)
                pos = last_nl + 1
        self._pending = data[pos:]
        self._start = base + pos
        return FeedResult(tuple(events), None, len(chunk))

    def finish(self) -> tuple[ParseEvent, ...]:
        """Flush any buffered text at end of stream."""
        if self._finished:
            return ()
        self._finished = True
        events: list[ParseEvent] = []
        self._emit_text(
            events, self._pending, self._start, 0, len(self._pending), terminal=True
        )
        self._start += len(self._pending)
        self._pending = ""
        return tuple(events)

    def _transition(self, tag: str) -> Optional[StopSignal]:
        if tag == PREF_OPEN:
            self._region = "pref"
        elif tag == PREF_CLOSE:
            self._region = "plain"
            return StopSignal.AT_PREF_CLOSE
        elif tag == ITEMS_OPEN:
            self._region = "items"
        elif tag == ITEMS_CLOSE:
            self._region = "plain"
        elif tag == REC_OPEN:
            self._region = "rec"
        elif tag == REC_CLOSE:
            self._region = "plain"
            return StopSignal.AT_REC_CLOSE
        return None

    def _emit_text(
        self,
        out: list[ParseEvent],
        data: str,
        base: int,
        a: int,
        b: int,
        terminal: bool,
    ) -> None:
        if b <= a:
            return
        if self._region == "pref":
            kind = EventKind.PREF_TEXT
        elif self._region == "rec":
            kind = EventKind.REC_LINE
        else:
            kind = EventKind.PLAIN_TEXT
        if self._region in ("items", "rec"):
            # one event per line, newline included in the span
            i = a
            while i < b:
                nl = data.find("\n", i, b)
                if nl == -1:
                    if terminal:
                        out.append(ParseEvent(kind, data[i:b], base + i, base + b))
                    break
                out.append(ParseEvent(kind, data[i : nl + 1], base + i, base + nl + 1))
                i = nl + 1
        else:
            out.append(ParseEvent(kind, data[a:b], base + a, base + b))


def parse_events(raw_text: str) -> list[ParseEvent]:
    """Parse a complete text into its full event sequence."""
    parser = StreamParser()
    events: list[ParseEvent] = []
    rest = raw_text
    while rest:
        result = parser.feed(rest)
        events.extend(result.events)
        rest = rest[result.consumed :]
    events.extend(parser.finish())
    return events


@dataclass
class Turn:
    """One reasoning-retrieval round: thought, preference, retrieved items."""

    thought: str
    preference: str
    retrieved: list[int]


@dataclass
class Trajectory:
    """One complete episode as seen by the scorer."""

    turns: list[Turn]
    final_titles: list[str]
    final_items: list[int]
    raw_text: str
    history: Optional[list[int]] = None

    @property
    def m(self) -> int:
        return len(self.turns)

    def retrieved_union(self) -> list[int]:
        """Distinct retrieved ids across turns, in first-retrieved order."""
        seen: dict[int, None] = {}
        for turn in self.turns:
            for item_id in turn.retrieved:
                seen.setdefault(item_id, None)
        return list(seen)

    def to_record(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "history": self.history,
            "turns": [
                {
                    "thought": t.thought,
                    "preference": t.preference,
                    "retrieved": t.retrieved,
                }
                for t in self.turns
            ],
            "final_titles": self.final_titles,
            "final_items": self.final_items,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "Trajectory":
        return cls(
            turns=[
                Turn(t["thought"], t["preference"], list(t["retrieved"]))
                for t in record.get("turns", [])
            ],
            final_titles=list(record.get("final_titles", [])),
            final_items=list(record.get("final_items", [])),
            raw_text=record.get("raw_text", ""),
            history=record.get("history"),
        )


@dataclass
class FormatReport:
    """Per-checkpoint verdicts; overall_ok is their conjunction."""

    structure_ok: bool = True
    list_shape_ok: bool = True
    preference_tags_ok: bool = True
    grounding_ok: bool = True
    invoked_at_least_once: bool = True

    @property
    def overall_ok(self) -> bool:
        return (
            self.structure_ok
            and self.list_shape_ok
            and self.preference_tags_ok
            and self.grounding_ok
            and self.invoked_at_least_once
        )

    def to_record(self) -> dict[str, Any]:
        return {
            "structure_ok": self.structure_ok,
            "list_shape_ok": self.list_shape_ok,
            "preference_tags_ok": self.preference_tags_ok,
            "grounding_ok": self.grounding_ok,
            "invoked_at_least_once": self.invoked_at_least_once,
            "overall_ok": self.overall_ok,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "FormatReport":
        return cls(
            structure_ok=bool(record.get("structure_ok", False)),
            list_shape_ok=bool(record.get("list_shape_ok", False)),
            preference_tags_ok=bool(record.get("preference_tags_ok", False)),
            grounding_ok=bool(record.get("grounding_ok", False)),
            invoked_at_least_once=bool(record.get("invoked_at_least_once", False)),
        )


# validator states; tags force the state they open regardless of legality,
# so extraction keeps working on malformed input
_TAG_TARGET = {
    EventKind.THINK_OPEN: "body",
    EventKind.THINK_CLOSE: "closed",
    EventKind.PREF_OPEN: "pref",
    EventKind.PREF_CLOSE: "after_pref",
    EventKind.ITEMS_OPEN: "items",
    EventKind.ITEMS_CLOSE: "body",
    EventKind.REC_OPEN: "rec",
    EventKind.REC_CLOSE: "done",
}

_TAG_EXPECTED_IN = {
    EventKind.THINK_OPEN: {"pre"},
    EventKind.THINK_CLOSE: {"body"},
    EventKind.PREF_OPEN: {"body"},
    EventKind.PREF_CLOSE: {"pref"},
    EventKind.ITEMS_OPEN: {"after_pref"},
    EventKind.ITEMS_CLOSE: {"items"},
    EventKind.REC_OPEN: {"closed"},
    EventKind.REC_CLOSE: {"rec"},
}

# states where free text is structurally legal (thought inside the think
# block, preference text, list lines)
_TEXT_OK_IN = {"body", "pref", "items", "rec"}


def parse_trajectory(
    raw_text: str,
    catalog: Any,
    k: int,
    history: Optional[list[int]] = None,
) -> tuple[Trajectory, FormatReport]:
    """Parse a complete episode and grade its format.

    ``catalog`` must expose ``id_for_normalized_title(title) -> int | None``.
    Never raises on malformed text: every defect lands in the report.
    """
    events = parse_events(raw_text)
    report = FormatReport()
    state = "pre"

    turns: list[Turn] = []
    thought_parts: list[str] = []
    pref_parts: list[str] = []
    pending_pref: Optional[str] = None
    items_lines: list[str] = []
    rec_lines: list[str] = []
    saw_rec_close = False

    for event in events:
        if event.kind in _TAG_TARGET:
            if state not in _TAG_EXPECTED_IN[event.kind]:
                report.structure_ok = False
                if event.kind == EventKind.PREF_OPEN and state == "pref":
                    report.preference_tags_ok = False
                if event.kind == EventKind.PREF_CLOSE and state != "pref":
                    report.preference_tags_ok = False
            if event.kind == EventKind.PREF_CLOSE and state == "pref":
                pending_pref = "".join(pref_parts).strip()
                pref_parts = []
                if not pending_pref:
                    report.preference_tags_ok = False
            if event.kind == EventKind.ITEMS_CLOSE and state == "items":
                retrieved = _resolve_item_lines(items_lines, catalog)
                turns.append(
                    Turn(
                        thought="".join(thought_parts).strip(),
                        preference=pending_pref or "",
                        retrieved=retrieved,
                    )
                )
                thought_parts = []
                items_lines = []
                pending_pref = None
            if event.kind == EventKind.REC_CLOSE and state == "rec":
                saw_rec_close = True
            if event.kind == EventKind.PREF_OPEN and state == "pref":
                pref_parts = []
            state = _TAG_TARGET[event.kind]
        else:
            if state == "pref":
                pref_parts.append(event.payload)
            elif state == "items":
                items_lines.append(event.payload)
            elif state == "rec":
                rec_lines.append(event.payload)
            elif state == "body":
                thought_parts.append(event.payload)
            else:
                # pre / after_pref / closed / done: only whitespace belongs here
                if event.payload.strip():
                    report.structure_ok = False

    if state != "done":
        report.structure_ok = False
        if state == "pref":
            report.preference_tags_ok = False
    if not saw_rec_close:
        report.list_shape_ok = False

    # final list shape and grounding
    final_titles = [line.strip() for line in rec_lines if line.strip()]
    retrieved_by_title: dict[str, int] = {}
    for turn in turns:
        for item_id in turn.retrieved:
            title = catalog.title_of(item_id)
            retrieved_by_title.setdefault(normalize_title(title), item_id)

    normalized_finals: list[str] = []
    final_items: list[int] = []
    for title in final_titles:
        norm = normalize_title(strip_numbering(title))
        normalized_finals.append(norm)
        item_id = retrieved_by_title.get(norm)
        if item_id is None:
            report.grounding_ok = False
        else:
            final_items.append(item_id)

    if saw_rec_close:
        if len(final_titles) != k:
            report.list_shape_ok = False
        if len(set(normalized_finals)) != len(normalized_finals):
            report.list_shape_ok = False

    if not turns:
        report.invoked_at_least_once = False

    trajectory = Trajectory(
        turns=turns,
        final_titles=final_titles,
        final_items=final_items,
        raw_text=raw_text,
        history=history,
    )
    return trajectory, report


def _resolve_item_lines(lines: Iterable[str], catalog: Any) -> list[int]:
    resolved: list[int] = []
    seen: set[int] = set()
    for line in lines:
        text = strip_numbering(line.strip())
        if not text:
            continue
        item_id = catalog.id_for_normalized_title(normalize_title(text))
        if item_id is not None and item_id not in seen:
            resolved.append(item_id)
            seen.add(item_id)
    return resolved
