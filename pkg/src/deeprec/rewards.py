"""Rule-based reward suite over parsed trajectories.

Process level: generation format (0 or -1), invocation count, preference
diversity. Outcome level: point-wise embedding similarity, hit, and
linear-decay rank. Stage totals: the cold-start total sums the process
rewards, the recommendation total sums format plus the outcome rewards.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .protocol import FormatReport, Trajectory
from .retrieval import HashedTextProvider, PreferenceVector

STAGE_COLD_START = "cold_start"
STAGE_RECOMMENDATION = "recommendation"


@dataclass(frozen=True)
class RewardConfig:
    invocation_cap: int = 3  # max counted invocations
    k_final: int = 10  # required final list length
    rank_step: float = 0.2
    stage: str = STAGE_COLD_START

    def __post_init__(self) -> None:
        if self.invocation_cap < 1:
            raise ConfigError("invocation_cap must be >= 1")
        if self.k_final < 1:
            raise ConfigError("k_final must be >= 1")
        if self.rank_step <= 0:
            raise ConfigError("rank_step must be positive")
        if self.stage not in (STAGE_COLD_START, STAGE_RECOMMENDATION):
            raise ConfigError(f"unknown stage {self.stage!r}")


@dataclass
class RewardBreakdown:
    format: float
    invocation: float
    diversity: float
    point: float
    hit: float
    rank: float
    stage: str
    stage_total: float

    def to_record(self) -> dict[str, Any]:
        return {
            "format": self.format,
            "invocation": self.invocation,
            "diversity": self.diversity,
            "point": self.point,
            "hit": self.hit,
            "rank": self.rank,
            "stage": self.stage,
            "stage_total": self.stage_total,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "RewardBreakdown":
        return cls(
            format=float(record["format"]),
            invocation=float(record["invocation"]),
            diversity=float(record["diversity"]),
            point=float(record["point"]),
            hit=float(record["hit"]),
            rank=float(record["rank"]),
            stage=str(record["stage"]),
            stage_total=float(record["stage_total"]),
        )


def reward_format(report: FormatReport) -> float:
    return 0.0 if report.overall_ok else -1.0


def reward_invocation(m: int, cap: int) -> float:
    """1 beyond the cap, half-point steps from the second call up to it."""
    if m > cap:
        return 1.0
    if 1 < m <= cap:
        return (m - 1) * 0.5
    return 0.0


def _as_vector(v: Any) -> np.ndarray:
    if isinstance(v, PreferenceVector):
        return v.values
    return np.asarray(v, dtype=np.float64)


def reward_diversity(preference_vectors: Sequence[Any]) -> float:
    """One minus the mean pairwise cosine; 0 when fewer than two calls."""
    vectors = [_as_vector(v) for v in preference_vectors]
    m = len(vectors)
    if m <= 1:
        return 0.0
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += float(np.dot(vectors[i], vectors[j]))
    pairs = m * (m - 1) / 2
    return 1.0 - total / pairs


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a / na, b / nb))


def reward_point(final_items: Sequence[int], label: int, index: Any) -> float:
    """Position-weighted mean of textual+collaborative similarity to the label.

    Weights are (K'-k+1)^2 over the emitted list length K', so partially
    resolved lists are scored over what exists.
    """
    k_eff = len(final_items)
    if k_eff < 1:
        raise ValueError("final_items must be non-empty")
    label_text = index.text_row(label)
    label_collab = index.collab_row(label)
    num = 0.0
    den = 0.0
    for pos, item_id in enumerate(final_items, start=1):
        w = (k_eff - pos + 1) ** 2
        s_t = _cosine(index.text_row(item_id), label_text)
        s_c = _cosine(index.collab_row(item_id), label_collab)
        num += w * (s_t + s_c)
        den += w
    return num / (2.0 * den)


def reward_hit(final_items: Sequence[int], label: int) -> float:
    return 1.0 if label in final_items else 0.0


def reward_rank(
    final_items: Sequence[int], label: int, k: int, step: float = 0.2
) -> float:
    """Linear decay from k*step at position 1 down to step at position k."""
    if k < len(final_items):
        raise ValueError(f"k={k} smaller than emitted list ({len(final_items)})")
    if label not in final_items:
        return 0.0
    k_y = final_items.index(label) + 1
    return (k - k_y + 1) * step


def score_trajectory(
    trajectory: Trajectory,
    report: FormatReport,
    label: Optional[int],
    index: Any,
    config: RewardConfig = RewardConfig(),
    text_provider: Any = None,
) -> RewardBreakdown:
    """All six components plus the configured stage total.

    Outcome components fall back to 0 when the final list is unresolved or
    no label is known; the format reward already carries the -1 penalty in
    the malformed case.
    """
    if text_provider is None:
        text_provider = HashedTextProvider(index.dim)

    r_format = reward_format(report)
    r_invocation = reward_invocation(trajectory.m, config.invocation_cap)

    vectors = []
    for turn in trajectory.turns:
        if turn.preference.strip():
            vectors.append(text_provider.embed(turn.preference).values)
        else:
            vectors.append(np.zeros(index.dim, dtype=np.float64))
    r_diversity = reward_diversity(vectors)

    if label is not None and trajectory.final_items:
        r_point = reward_point(trajectory.final_items, label, index)
        r_hit = reward_hit(trajectory.final_items, label)
        # over-long (already format-invalid) lists widen k so positions stay defined
        k_rank = max(config.k_final, len(trajectory.final_items))
        r_rank = reward_rank(trajectory.final_items, label, k_rank, config.rank_step)
    else:
        r_point = 0.0
        r_hit = 0.0
        r_rank = 0.0

    if config.stage == STAGE_COLD_START:
        total = r_format + r_invocation + r_diversity
    else:
        total = r_format + r_point + r_hit + r_rank

    return RewardBreakdown(
        format=r_format,
        invocation=r_invocation,
        diversity=r_diversity,
        point=r_point,
        hit=r_hit,
        rank=r_rank,
        stage=config.stage,
        stage_total=total,
    )
