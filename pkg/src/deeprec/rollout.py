"""Multi-turn episode driver and the built-in policies.

The Episode state machine owns the context, the stream parser, and the
injection of retrieved item lists; both the in-process runner and the HTTP
session service drive the same machine, which is what makes the two paths
byte-identical. Policies only ever see text.
"""

from __future__ import annotations

import copy
import random
import re
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence

import numpy as np

from .corpus import SplitSample
from .errors import ConfigError, PolicyTransportError
from .protocol import (
    ITEMS_CLOSE,
    ITEMS_OPEN,
    PREF_CLOSE,
    PREF_OPEN,
    REC_CLOSE,
    REC_OPEN,
    THINK_CLOSE,
    THINK_OPEN,
    EventKind,
    FormatReport,
    StopSignal,
    StreamParser,
    Trajectory,
    inject_item_list,
    parse_trajectory,
    render_system_prompt,
    strip_numbering,
)
from .retrieval import HashedTextProvider
from .rewards import RewardBreakdown, RewardConfig, score_trajectory


@dataclass(frozen=True)
class RolloutConfig:
    max_turns: int = 8
    k_retrieve: int = 20
    k_final: int = 10
    mask_history: bool = True
    seed: int = 0
    char_budget: int = 32768

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ConfigError("max_turns must be >= 1")
        if self.k_retrieve < 1 or self.k_final < 1:
            raise ConfigError("k_retrieve and k_final must be >= 1")
        if self.char_budget < 1:
            raise ConfigError("char_budget must be >= 1")


class Policy(Protocol):
    def start_episode(self, sample: SplitSample, catalog: Any, config: RolloutConfig, seed: int) -> None: ...

    def generate(self, context: str, stop_markers: Sequence[str], budget: int) -> str: ...


@dataclass
class EpisodeResult:
    sample: SplitSample
    seed: int
    trajectory: Optional[Trajectory]
    report: Optional[FormatReport]
    rewards: Optional[RewardBreakdown]
    truncated: bool
    error: Optional[str] = None

    def to_record(self) -> dict[str, Any]:
        return {
            "user_id": self.sample.user_id,
            "history": self.sample.history,
            "label": self.sample.label,
            "seed": self.seed,
            "trajectory": self.trajectory.to_record() if self.trajectory else None,
            "report": self.report.to_record() if self.report else None,
            "rewards": self.rewards.to_record() if self.rewards else None,
            "truncated": self.truncated,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "EpisodeResult":
        sample = SplitSample(
            user_id=str(record["user_id"]),
            history=[int(i) for i in record["history"]],
            label=int(record["label"]),
            split="test",
        )
        return cls(
            sample=sample,
            seed=int(record.get("seed", 0)),
            trajectory=Trajectory.from_record(record["trajectory"])
            if record.get("trajectory")
            else None,
            report=FormatReport.from_record(record["report"])
            if record.get("report")
            else None,
            rewards=RewardBreakdown.from_record(record["rewards"])
            if record.get("rewards")
            else None,
            truncated=bool(record.get("truncated", False)),
            error=record.get("error"),
        )


def render_history_block(catalog: Any, history: Sequence[int]) -> str:
    lines = [f"{i}. {catalog.title_of(item_id)}" for i, item_id in enumerate(history, 1)]
    body = "\n".join(lines) if lines else "(no prior interactions)"
    return "Previously interacted items, in chronological order:\n" + body


@dataclass
class StepOutcome:
    """What one feed of generated text did to the episode."""

    status: str  # retrieval | terminal | truncated | incomplete
    injected_text: Optional[str] = None
    items: list[tuple[int, str, float]] = field(default_factory=list)
    result: Optional["EpisodeResult"] = None
    ignored_chars: int = 0


class Episode:
    """Single-episode state machine shared by runner and service.

    The raw episode text starts at the opening think tag (which the
    environment provides) and grows only by appending policy text up to a
    stop marker plus environment injections.
    """

    def __init__(
        self,
        sample: SplitSample,
        index: Any,
        config: RolloutConfig,
        reward_config: Optional[RewardConfig] = None,
        text_provider: Any = None,
        seed: int = 0,
    ):
        self.sample = sample
        self.index = index
        self.catalog = index.catalog
        self.config = config
        self.reward_config = reward_config or RewardConfig(k_final=config.k_final)
        self.text_provider = text_provider or HashedTextProvider(index.dim)
        self.seed = seed

        self.system_prompt = render_system_prompt(config.k_final)
        self.raw = THINK_OPEN
        self.context = (
            self.system_prompt
            + "\n\n"
            + render_history_block(self.catalog, sample.history)
            + "\n\n"
            + THINK_OPEN
        )
        self._parser = StreamParser()
        self._parser.feed(THINK_OPEN)
        self._pref_parts: list[str] = []
        self.turns_done = 0
        self.done = False
        self.truncated = False
        self.result: Optional[EpisodeResult] = None

    @property
    def stop_markers(self) -> list[str]:
        return [PREF_CLOSE, REC_CLOSE]

    @property
    def budget_left(self) -> int:
        return self.config.char_budget - len(self.raw)

    def feed_generated(self, text: str) -> StepOutcome:
        """Append policy output; retrieve-and-inject or finish as signaled."""
        if self.done:
            raise RuntimeError("episode already finished")
        over_budget = False
        if len(text) > self.budget_left:
            text = text[: self.budget_left]
            over_budget = True

        result = self._parser.feed(text)
        consumed = text[: result.consumed]
        ignored = len(text) - result.consumed
        self.raw += consumed
        self.context += consumed
        for event in result.events:
            if event.kind == EventKind.PREF_TEXT:
                self._pref_parts.append(event.payload)

        if result.stop == StopSignal.AT_PREF_CLOSE:
            preference = "".join(self._pref_parts).strip()
            self._pref_parts = []
            if self.turns_done >= self.config.max_turns:
                return self._finish(truncated=True)
            injected, items = self._retrieve_and_inject(preference)
            return StepOutcome(
                "retrieval", injected_text=injected, items=items, ignored_chars=ignored
            )

        if result.stop == StopSignal.AT_REC_CLOSE:
            outcome = self._finish(truncated=False)
            outcome.ignored_chars = ignored
            return outcome

        if over_budget or self.budget_left <= 0:
            return self._finish(truncated=True)
        return StepOutcome("incomplete")

    def _retrieve_and_inject(self, preference: str) -> tuple[str, list[tuple[int, str, float]]]:
        h_history = self.index.encode_history(
            self.sample.history, user_id=self.sample.user_id
        )
        if preference:
            h_text = self.text_provider.embed(preference).values
        else:
            h_text = np.zeros(self.index.dim, dtype=np.float64)
        query = self.index.fuse(h_history, h_text)
        mask = set(self.sample.history) if self.config.mask_history else None
        top = self.index.retrieve_top_k(query, self.config.k_retrieve, mask=mask)
        titles = [self.catalog.title_of(item_id) for item_id, _ in top]
        injected = "\n" + inject_item_list(titles) + "\n"
        self._parser.feed(injected)
        self.raw += injected
        self.context += injected
        self.turns_done += 1
        items = [
            (item_id, self.catalog.title_of(item_id), score) for item_id, score in top
        ]
        return injected, items

    def _finish(self, truncated: bool) -> StepOutcome:
        self.done = True
        self.truncated = truncated
        trajectory, report = parse_trajectory(
            self.raw, self.catalog, self.config.k_final, history=list(self.sample.history)
        )
        rewards = score_trajectory(
            trajectory,
            report,
            self.sample.label if self.sample.label >= 0 else None,
            self.index,
            self.reward_config,
            self.text_provider,
        )
        self.result = EpisodeResult(
            sample=self.sample,
            seed=self.seed,
            trajectory=trajectory,
            report=report,
            rewards=rewards,
            truncated=truncated,
        )
        return StepOutcome(
            "truncated" if truncated else "terminal", result=self.result
        )


def run_episode(
    policy: Policy,
    sample: SplitSample,
    index: Any,
    config: RolloutConfig = RolloutConfig(),
    reward_config: Optional[RewardConfig] = None,
    text_provider: Any = None,
    seed: Optional[int] = None,
) -> EpisodeResult:
    """Drive one full episode with an in-process policy."""
    episode_seed = config.seed if seed is None else seed
    episode = Episode(
        sample, index, config, reward_config, text_provider, seed=episode_seed
    )
    policy.start_episode(sample, episode.catalog, config, episode_seed)
    while not episode.done:
        text = policy.generate(episode.context, episode.stop_markers, episode.budget_left)
        if not text:
            episode._finish(truncated=True)
            break
        episode.feed_generated(text)
    assert episode.result is not None
    return episode.result


def derive_seed(seed: int, sample_index: int, repeat_index: int) -> int:
    """Deterministic per-episode seed from (base seed, sample, repeat)."""
    x = (seed & 0xFFFFFFFFFFFFFFFF) ^ (sample_index * 0x9E3779B97F4A7C15) ^ (
        repeat_index * 0xBF58476D1CE4E5B9
    )
    x &= 0xFFFFFFFFFFFFFFFF
    x = (x ^ (x >> 30)) * 0x2545F4914F6CDD1D & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 27)


def run_batch(
    policy: Policy,
    samples: Sequence[SplitSample],
    rollouts_per_sample: int,
    index: Any,
    config: RolloutConfig = RolloutConfig(),
    reward_config: Optional[RewardConfig] = None,
    text_provider: Any = None,
    jobs: int = 1,
) -> list[EpisodeResult]:
    """rollouts_per_sample episodes per sample, deterministically ordered.

    Individual episode failures become error records; the batch continues.
    """
    if rollouts_per_sample < 1:
        raise ConfigError("rollouts_per_sample must be >= 1")
    tasks = [
        (s_idx, r_idx, sample)
        for s_idx, sample in enumerate(samples)
        for r_idx in range(rollouts_per_sample)
    ]

    def run_one(task: tuple[int, int, SplitSample]) -> EpisodeResult:
        s_idx, r_idx, sample = task
        episode_seed = derive_seed(config.seed, s_idx, r_idx)
        # policies are stateful per episode; concurrent episodes need copies
        task_policy = copy.deepcopy(policy) if jobs > 1 else policy
        try:
            return run_episode(
                task_policy,
                sample,
                index,
                config,
                reward_config,
                text_provider,
                seed=episode_seed,
            )
        except PolicyTransportError as exc:
            return EpisodeResult(
                sample=sample,
                seed=episode_seed,
                trajectory=None,
                report=None,
                rewards=None,
                truncated=False,
                error=str(exc),
            )

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_one, tasks))
    return [run_one(task) for task in tasks]


_LAST_ITEMS_BLOCK = re.compile(
    re.escape(ITEMS_OPEN) + r"(.*?)" + re.escape(ITEMS_CLOSE), re.DOTALL
)


def episode_text_of(context: str) -> str:
    """The response portion of a context: everything from the seeded
    response-start think tag. The system prompt mentions the tag literals,
    so scripted policies must not scan the full context for them."""
    at = context.rfind(THINK_OPEN)
    return context[at:] if at != -1 else context


def retrieved_titles_in(context: str) -> list[str]:
    """Distinct injected titles in first-retrieved order, numbering stripped."""
    titles: dict[str, None] = {}
    for block in _LAST_ITEMS_BLOCK.findall(episode_text_of(context)):
        for line in block.splitlines():
            line = strip_numbering(line.strip())
            if line:
                titles.setdefault(line, None)
    return list(titles)


def last_injected_titles(context: str) -> list[str]:
    blocks = _LAST_ITEMS_BLOCK.findall(episode_text_of(context))
    if not blocks:
        return []
    return [
        strip_numbering(line.strip())
        for line in blocks[-1].splitlines()
        if line.strip()
    ]


def _final_block(titles: Sequence[str]) -> str:
    return (
        THINK_CLOSE
        + "\n"
        + REC_OPEN
        + "\n"
        + "\n".join(titles)
        + "\n"
        + REC_CLOSE
    )


class OraclePolicy:
    """Scripted reference policy: queries with the label's own title, then
    copies the injected top-K titles as its final ranked list."""

    def __init__(self) -> None:
        self._label_title = ""
        self._k_final = 10

    def start_episode(self, sample: SplitSample, catalog: Any, config: RolloutConfig, seed: int) -> None:
        self._label_title = catalog.title_of(sample.label)
        self._k_final = config.k_final

    def generate(self, context: str, stop_markers: Sequence[str], budget: int) -> str:
        if ITEMS_CLOSE not in episode_text_of(context):
            return (
                "The held-out target is known, so query for it directly.\n"
                + PREF_OPEN
                + self._label_title
                + PREF_CLOSE
            )
        titles = last_injected_titles(context)[: self._k_final]
        return "\n" + _final_block(titles)


class TemplatePolicy:
    """Replays scripted thoughts, preferences, and final list from a record.

    Template record fields: ``turns`` (list of {thought, preference}),
    and either ``final_titles`` or ``final_from_retrieved`` (copy the
    first K distinct retrieved titles).
    """

    def __init__(self, template: dict[str, Any]):
        self.turns = list(template.get("turns", []))
        if not self.turns:
            raise ConfigError("template needs at least one turn")
        self.final_titles = template.get("final_titles")
        self.final_from_retrieved = bool(template.get("final_from_retrieved", False))
        if self.final_titles is None and not self.final_from_retrieved:
            raise ConfigError("template needs final_titles or final_from_retrieved")
        self._k_final = 10

    @classmethod
    def from_file(cls, path: str) -> "TemplatePolicy":
        import json

        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh))

    def start_episode(self, sample: SplitSample, catalog: Any, config: RolloutConfig, seed: int) -> None:
        self._k_final = config.k_final

    def generate(self, context: str, stop_markers: Sequence[str], budget: int) -> str:
        done = episode_text_of(context).count(ITEMS_CLOSE)
        if done < len(self.turns):
            turn = self.turns[done]
            thought = turn.get("thought", "")
            lead = (thought + "\n") if thought else ""
            if done > 0:
                lead = "\n" + lead
            return lead + PREF_OPEN + turn["preference"] + PREF_CLOSE
        if self.final_titles is not None:
            titles = list(self.final_titles)
        else:
            titles = retrieved_titles_in(context)[: self._k_final]
        return "\n" + _final_block(titles)


_RANDOM_WORDS = (
    "atmospheric gritty upbeat nostalgic fast-paced slow-burn quirky epic "
    "minimalist sprawling cozy bleak romantic tactical cooperative "
    "open-world puzzle survival narrative roguelike arcade simulation "
    "strategy horror fantasy noir western space pirate cyberpunk"
).split()


class RandomPolicy:
    """Samples 1-3 random word preferences, then copies retrieved titles."""

    def __init__(self, seed: int):
        self.base_seed = seed
        self._rng = random.Random(seed)
        self._n_turns = 1
        self._k_final = 10

    def start_episode(self, sample: SplitSample, catalog: Any, config: RolloutConfig, seed: int) -> None:
        self._rng = random.Random((self.base_seed << 1) ^ seed)
        self._n_turns = self._rng.randint(1, 3)
        self._k_final = config.k_final

    def generate(self, context: str, stop_markers: Sequence[str], budget: int) -> str:
        done = episode_text_of(context).count(ITEMS_CLOSE)
        if done < self._n_turns:
            words = self._rng.sample(_RANDOM_WORDS, k=self._rng.randint(3, 6))
            lead = "\n" if done > 0 else ""
            return (
                lead
                + f"Exploring angle {done + 1}.\n"
                + PREF_OPEN
                + " ".join(words)
                + PREF_CLOSE
            )
        titles = retrieved_titles_in(context)[: self._k_final]
        return "\n" + _final_block(titles)


class RemotePolicy:
    """Minimal HTTP completion protocol.

    Request: POST <url> with {"context", "stop", "max_chars", "seed"}.
    Response: {"text", "finish_reason"}. Transport failures raise
    PolicyTransportError so batches can record and continue.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout
        self._seed = 0

    def start_episode(self, sample: SplitSample, catalog: Any, config: RolloutConfig, seed: int) -> None:
        self._seed = seed

    def generate(self, context: str, stop_markers: Sequence[str], budget: int) -> str:
        import httpx

        try:
            response = httpx.post(
                self.url,
                json={
                    "context": context,
                    "stop": list(stop_markers),
                    "max_chars": budget,
                    "seed": self._seed,
                },
                timeout=self.timeout,
            )
            response.raise_for_status()
            return response.json()["text"]
        except Exception as exc:
            raise PolicyTransportError(f"remote policy {self.url}: {exc}") from exc


def make_policy(spec: str) -> Policy:
    """Parse a policy spec: oracle | template:<file> | random:<seed> | remote:<url>."""
    if spec == "oracle":
        return OraclePolicy()
    if spec.startswith("template:"):
        return TemplatePolicy.from_file(spec[len("template:") :])
    if spec.startswith("random:"):
        try:
            return RandomPolicy(int(spec[len("random:") :]))
        except ValueError as exc:
            raise ConfigError(f"bad random policy seed in {spec!r}") from exc
    if spec.startswith("remote:"):
        return RemotePolicy(spec[len("remote:") :])
    raise ConfigError(f"unknown policy spec {spec!r}")
