"""Full-item-space and end-to-end evaluation: Recall@K, NDCG@K, coverage.

Both evaluators use the single-relevant-item NDCG form implied by
leave-one-out: gain 1 at the label's rank r with discount 1/log2(r+1).
Format-invalid episodes count as misses on every metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from .corpus import SplitSample
from .errors import ConfigError
from .rollout import EpisodeResult, RolloutConfig, make_policy, run_batch


@dataclass
class MetricReport:
    ks: list[int]
    recall: dict[int, float]
    ndcg: dict[int, float]
    n_samples: int
    coverage: Optional[float] = None
    mean_m: Optional[float] = None
    invocation_hist: Optional[dict[int, int]] = None

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {"n_samples": self.n_samples}
        for k in self.ks:
            record[f"recall@{k}"] = self.recall[k]
        for k in self.ks:
            record[f"ndcg@{k}"] = self.ndcg[k]
        record["coverage"] = self.coverage
        record["mean_m"] = self.mean_m
        record["invocation_hist"] = (
            {str(m): c for m, c in sorted(self.invocation_hist.items())}
            if self.invocation_hist is not None
            else None
        )
        return record


def _aggregate(ranks: Sequence[Optional[int]], ks: Sequence[int]) -> tuple[dict, dict]:
    """Mean recall/ndcg over per-sample ranks (None = miss)."""
    recall: dict[int, float] = {}
    ndcg: dict[int, float] = {}
    n = len(ranks)
    for k in ks:
        hits = 0
        gain = 0.0
        for r in ranks:
            if r is not None and r <= k:
                hits += 1
                gain += 1.0 / math.log2(r + 1)
        recall[k] = hits / n if n else 0.0
        ndcg[k] = gain / n if n else 0.0
    return recall, ndcg


def evaluate_retriever(
    index: Any,
    samples: Sequence[SplitSample],
    ks: Sequence[int] = (5, 10),
    mask_history: bool = True,
) -> MetricReport:
    """Full-space label ranks under the history-only encoding."""
    ks = sorted(ks)
    ranks: list[Optional[int]] = []
    for sample in samples:
        vec = index.encode_history(sample.history, user_id=sample.user_id)
        mask = (set(sample.history) - {sample.label}) if mask_history else None
        ranks.append(index.rank_of(vec, sample.label, mask=mask))
    recall, ndcg = _aggregate(ranks, ks)
    return MetricReport(
        ks=list(ks), recall=recall, ndcg=ndcg, n_samples=len(samples)
    )


def evaluate_trajectories(
    results: Sequence[EpisodeResult],
    ks: Sequence[int] = (5, 10),
    k_final: int = 10,
) -> MetricReport:
    """Metrics over final lists; the label's rank is its list position."""
    ks = sorted(ks)
    if ks and k_final < max(ks):
        raise ConfigError(f"k_final={k_final} must cover max evaluated K={max(ks)}")
    ranks: list[Optional[int]] = []
    coverage_total = 0
    hist: dict[int, int] = {}
    m_total = 0
    for result in results:
        trajectory = result.trajectory
        m = trajectory.m if trajectory else 0
        hist[m] = hist.get(m, 0) + 1
        m_total += m
        coverage_total += len(trajectory.retrieved_union()) if trajectory else 0
        rank: Optional[int] = None
        if (
            result.error is None
            and trajectory is not None
            and result.report is not None
            and result.report.overall_ok
            and result.sample.label in trajectory.final_items
        ):
            rank = trajectory.final_items.index(result.sample.label) + 1
        ranks.append(rank)
    recall, ndcg = _aggregate(ranks, ks)
    n = len(results)
    return MetricReport(
        ks=list(ks),
        recall=recall,
        ndcg=ndcg,
        n_samples=n,
        coverage=coverage_total / n if n else 0.0,
        mean_m=m_total / n if n else 0.0,
        invocation_hist=hist,
    )


@dataclass
class ComparisonRow:
    policy_spec: str
    report: MetricReport
    results: list[EpisodeResult] = field(default_factory=list)

    def to_record(self) -> dict[str, Any]:
        record = {"policy": self.policy_spec}
        record.update(self.report.to_record())
        return record


def compare_modes(
    policy_specs: Sequence[str],
    samples: Sequence[SplitSample],
    index: Any,
    config: RolloutConfig = RolloutConfig(),
    ks: Sequence[int] = (5, 10),
    rollouts_per_sample: int = 1,
    reward_config: Any = None,
    text_provider: Any = None,
    jobs: int = 1,
) -> list[ComparisonRow]:
    """Run each policy spec over the samples and evaluate side by side."""
    if len(policy_specs) < 2:
        raise ConfigError("compare needs at least two policy specs")
    rows: list[ComparisonRow] = []
    for spec in policy_specs:
        policy = make_policy(spec)
        results = run_batch(
            policy,
            samples,
            rollouts_per_sample,
            index,
            config,
            reward_config,
            text_provider,
            jobs=jobs,
        )
        report = evaluate_trajectories(results, ks, k_final=config.k_final)
        rows.append(ComparisonRow(spec, report, results))
    return rows


def format_table(records: Sequence[dict[str, Any]]) -> str:
    """Aligned plain-text table over flat records (shared key order)."""
    if not records:
        return "(no rows)\n"
    columns = [k for k in records[0] if k != "invocation_hist"]
    rendered: list[list[str]] = [columns]
    for record in records:
        row = []
        for key in columns:
            value = record.get(key)
            if isinstance(value, float):
                row.append(f"{value:.6f}")
            else:
                row.append(str(value))
        rendered.append(row)
    widths = [max(len(r[i]) for r in rendered) for i in range(len(columns))]
    lines = []
    for i, row in enumerate(rendered):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
