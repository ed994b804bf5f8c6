"""Render evaluation reports as figures next to the delimited output."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_metric_figures(
    rows: Sequence[dict[str, Any]],
    outdir: str | Path,
    ks: Sequence[int],
) -> list[Path]:
    """Write recall/ndcg bars, invocation histogram, and coverage figures.

    ``rows`` are flat report records (one per policy or a single one for a
    plain evaluation) as produced by MetricReport/ComparisonRow.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    labels = [str(r.get("policy", f"run {i}")) for i, r in enumerate(rows)]

    for metric in ("recall", "ndcg"):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        width = 0.8 / max(len(ks), 1)
        for j, k in enumerate(ks):
            values = [float(r.get(f"{metric}@{k}", 0.0) or 0.0) for r in rows]
            positions = [i + j * width for i in range(len(rows))]
            ax.bar(positions, values, width=width, label=f"@{k}")
        ax.set_xticks([i + width * (len(ks) - 1) / 2 for i in range(len(rows))])
        ax.set_xticklabels(labels, rotation=15, ha="right", fontsize=8)
        ax.set_ylabel(metric)
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = outdir / f"{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    hists = [r.get("invocation_hist") for r in rows]
    if any(hists):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        all_ms = sorted({int(m) for h in hists if h for m in h})
        width = 0.8 / max(len(rows), 1)
        for i, (label, hist) in enumerate(zip(labels, hists)):
            counts = [int((hist or {}).get(str(m), 0)) for m in all_ms]
            positions = [m + i * width for m in range(len(all_ms))]
            ax.bar(positions, counts, width=width, label=label)
        ax.set_xticks([m + width * (len(rows) - 1) / 2 for m in range(len(all_ms))])
        ax.set_xticklabels([str(m) for m in all_ms])
        ax.set_xlabel("retrieval invocations per episode")
        ax.set_ylabel("episodes")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = outdir / "invocations.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if any(r.get("coverage") is not None for r in rows):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        values = [float(r.get("coverage") or 0.0) for r in rows]
        ax.bar(range(len(rows)), values, width=0.6)
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=15, ha="right", fontsize=8)
        ax.set_ylabel("mean candidate-pool size")
        fig.tight_layout()
        path = outdir / "coverage.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
