"""Operator entry point: ingest, split, select, serve, rollout, eval, score.

Exit codes: 0 success, 1 domain error (single-line ``error: ...`` on
stderr), 2 usage error. Every flag has a config-file equivalent; explicit
flags win over the config tree, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import config as cfg
from . import corpus, evaluation, report
from .errors import DeepRecError
from .records import read_records, write_records, write_text_atomic
from .rewards import RewardConfig, score_trajectory
from .rollout import RolloutConfig, make_policy, run_batch
from .protocol import parse_trajectory


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=None,
        help="JSON config file (or set DEEPREC_CONFIG); flags override it",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deeprec",
        description="Environment engine for multi-turn reasoning-retrieval recommendation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="build sequences from raw interactions")
    _add_config_flag(p_ingest)
    p_ingest.add_argument("--items", help="items JSONL file")
    p_ingest.add_argument("--interactions", help="interactions CSV file")
    p_ingest.add_argument("--out", required=True, help="output directory")
    p_ingest.add_argument("--min-count", type=int, default=None, help="k-core threshold (default 5)")
    p_ingest.add_argument("--min-rating", type=float, default=None, help="keep ratings strictly above this (default 3)")
    p_ingest.add_argument("--max-len", type=int, default=None, help="sequence truncation length (default 20)")

    p_split = sub.add_parser("split", help="leave-one-out split of sequences")
    _add_config_flag(p_split)
    p_split.add_argument("--sequences", required=True, help="sequences JSONL from ingest")
    p_split.add_argument("--out", required=True, help="output splits JSONL file")

    p_select = sub.add_parser("select", help="difficulty-filter the train split")
    _add_config_flag(p_select)
    p_select.add_argument("--splits", required=True, help="splits JSONL file")
    p_select.add_argument("--out", required=True, help="filtered output JSONL file")
    p_select.add_argument("--max-rank", type=int, default=100, help="keep labels ranked within this (default 100)")
    p_select.add_argument("--split", default="train", help="which split tag to filter (default train; others pass through)")
    _add_engine_flags(p_select)

    p_serve = sub.add_parser("serve", help="run the HTTP session service")
    _add_config_flag(p_serve)
    p_serve.add_argument("--port", type=int, default=None, help="listen port (or DEEPREC_PORT)")
    p_serve.add_argument("--host", default=None, help="bind address (default 127.0.0.1)")
    p_serve.add_argument("--session-ttl", type=float, default=None, help="idle session TTL seconds (default 600)")
    p_serve.add_argument("--max-sessions", type=int, default=None, help="session capacity (default 1024)")
    p_serve.add_argument("--stage", default=None, help="default reward stage for terminal scoring")
    _add_engine_flags(p_serve)

    p_roll = sub.add_parser("rollout", help="run scripted/remote policy episodes")
    _add_config_flag(p_roll)
    p_roll.add_argument("--policy", required=True, help="oracle | template:<file> | random:<seed> | remote:<url>")
    p_roll.add_argument("--splits", required=True, help="splits JSONL file")
    p_roll.add_argument("--split", default="test", help="split tag to roll out (default test)")
    p_roll.add_argument("--rollouts", type=int, default=1, help="episodes per sample (default 1)")
    p_roll.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    p_roll.add_argument("--limit", type=int, default=None, help="cap the number of samples")
    p_roll.add_argument("--jobs", type=int, default=None, help="parallel episodes (default: cpu count)")
    p_roll.add_argument("--stage", default=None, help="reward stage: cold_start | recommendation")
    p_roll.add_argument("--out", required=True, help="output batch JSONL file")
    _add_engine_flags(p_roll)

    p_eval = sub.add_parser("eval", help="evaluate the retriever or rolled-out policies")
    _add_config_flag(p_eval)
    p_eval.add_argument("--splits", help="splits JSONL file (retriever mode)")
    p_eval.add_argument("--split", default="test", help="split tag to evaluate (default test)")
    p_eval.add_argument("--results", help="batch JSONL from rollout (trajectory mode)")
    p_eval.add_argument("--policy", action="append", default=None, help="run and evaluate this policy spec (repeat to compare)")
    p_eval.add_argument("--rollouts", type=int, default=1, help="episodes per sample when --policy is given")
    p_eval.add_argument("--k", default="5,10", help="comma-separated K values (default 5,10)")
    p_eval.add_argument("--seed", type=int, default=None, help="base seed for policy runs")
    p_eval.add_argument("--limit", type=int, default=None, help="cap the number of samples")
    p_eval.add_argument("--jobs", type=int, default=None, help="parallel episodes (default: cpu count)")
    p_eval.add_argument("--no-mask-history", action="store_true", help="rank against the full space incl. history items")
    p_eval.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    p_eval.add_argument("--out", required=True, help="output directory")
    _add_engine_flags(p_eval)

    p_score = sub.add_parser("score", help="score serialized trajectories")
    _add_config_flag(p_score)
    p_score.add_argument("--input", required=True, help="JSONL of trajectory records (may embed 'label')")
    p_score.add_argument("--label", type=int, default=None, help="label item id override")
    p_score.add_argument("--stage", default=None, help="cold_start | recommendation")
    p_score.add_argument("--out", default=None, help="output JSONL (default stdout)")
    _add_engine_flags(p_score)

    return parser


def _add_engine_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--items", help="items JSONL file")
    parser.add_argument("--collab", help="collaborative embedding file")
    parser.add_argument("--text", help="textual embedding file")
    parser.add_argument("--user-vectors", help="optional per-user vector file")
    parser.add_argument("--scoring", choices=("cosine", "dot"), default=None)
    parser.add_argument("--gamma", type=float, default=None, help="history decay (default 0.8)")
    parser.add_argument("--k-retrieve", type=int, default=None, help="items per retrieval (default 20)")
    parser.add_argument("--k-final", type=int, default=None, help="final list length (default 10)")
    parser.add_argument("--max-turns", type=int, default=None, help="turn cap (default 8)")
    parser.add_argument("--char-budget", type=int, default=None, help="episode char budget (default 32768)")
    parser.add_argument("--text-provider", default=None, help="hashed | file:<path> | remote:<url>")


def _tree_from_args(args: argparse.Namespace) -> dict[str, Any]:
    tree = cfg.load_config_tree(getattr(args, "config", None))
    overlay: dict[str, Any] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overlay.setdefault(section, {})[key] = value

    put("corpus", "items", getattr(args, "items", None))
    put("corpus", "interactions", getattr(args, "interactions", None))
    put("corpus", "min_count", getattr(args, "min_count", None))
    put("corpus", "min_rating", getattr(args, "min_rating", None))
    put("corpus", "max_len", getattr(args, "max_len", None))
    put("embeddings", "collaborative", getattr(args, "collab", None))
    put("embeddings", "textual", getattr(args, "text", None))
    put("embeddings", "user_vectors", getattr(args, "user_vectors", None))
    put("retrieval", "scoring", getattr(args, "scoring", None))
    put("retrieval", "gamma", getattr(args, "gamma", None))
    put("retrieval", "k_retrieve", getattr(args, "k_retrieve", None))
    put("rewards", "k_final", getattr(args, "k_final", None))
    put("rewards", "stage", getattr(args, "stage", None))
    put("rollout", "max_turns", getattr(args, "max_turns", None))
    put("rollout", "char_budget", getattr(args, "char_budget", None))
    put("rollout", "seed", getattr(args, "seed", None))
    put("service", "port", getattr(args, "port", None))
    put("service", "host", getattr(args, "host", None))
    put("service", "session_ttl", getattr(args, "session_ttl", None))
    put("service", "max_sessions", getattr(args, "max_sessions", None))
    if getattr(args, "no_mask_history", False):
        overlay.setdefault("retrieval", {})["mask_history"] = False
    if getattr(args, "text_provider", None) is not None:
        overlay["text_provider"] = args.text_provider
    return cfg._deep_merge(tree, overlay)


def _load_samples(path: str, split: Optional[str], limit: Optional[int]) -> list[corpus.SplitSample]:
    samples = [corpus.SplitSample.from_record(r) for r in read_records(path)]
    if split:
        samples = [s for s in samples if s.split == split]
    if limit is not None:
        samples = samples[:limit]
    return samples


def _default_jobs(args: argparse.Namespace) -> int:
    jobs = getattr(args, "jobs", None)
    if jobs is not None:
        return max(1, jobs)
    return max(1, os.cpu_count() or 1)


def cmd_ingest(args: argparse.Namespace) -> int:
    tree = _tree_from_args(args)
    items_path = tree["corpus"]["items"]
    inter_path = tree["corpus"]["interactions"]
    if not items_path or not inter_path:
        raise DeepRecError("ingest needs --items and --interactions (or config corpus.*)")
    catalog = corpus.load_catalog(items_path)
    rows = corpus.read_interactions_csv(inter_path)
    sequences, ingest_report = corpus.ingest_interactions(
        rows,
        catalog,
        min_count=int(tree["corpus"]["min_count"]),
        min_rating=float(tree["corpus"]["min_rating"]),
        max_len=int(tree["corpus"]["max_len"]),
    )
    outdir = Path(args.out)
    write_records(outdir / "sequences.jsonl", (s.to_record() for s in sequences))
    write_text_atomic(
        outdir / "ingest_report.json",
        json.dumps(ingest_report.to_record(), indent=2) + "\n",
    )
    print(
        f"ingest: {ingest_report.users_kept} users kept "
        f"({ingest_report.raw_records} raw records, "
        f"{ingest_report.unknown_item} unknown items skipped)"
    )
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    sequences = [
        corpus.InteractionSequence.from_record(r) for r in read_records(args.sequences)
    ]
    samples = corpus.split_leave_one_out(sequences)
    write_records(args.out, (s.to_record() for s in samples))
    counts: dict[str, int] = {}
    for sample in samples:
        counts[sample.split] = counts.get(sample.split, 0) + 1
    print(f"split: {counts.get('train', 0)} train, {counts.get('valid', 0)} valid, {counts.get('test', 0)} test")
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    tree = _tree_from_args(args)
    engine = cfg.build_engine(tree)
    samples = [corpus.SplitSample.from_record(r) for r in read_records(args.splits)]
    targeted = [s for s in samples if s.split == args.split]
    passthrough = [s for s in samples if s.split != args.split]
    kept = corpus.select_by_difficulty(
        targeted,
        engine.index,
        max_rank=args.max_rank,
        mask_history=tree["retrieval"]["mask_history"],
    )
    merged = kept + passthrough
    write_records(args.out, (s.to_record() for s in merged))
    print(
        f"select: kept {len(kept)}/{len(targeted)} {args.split} samples "
        f"with label rank <= {args.max_rank}"
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    tree = _tree_from_args(args)
    engine = cfg.build_engine(tree)
    port = tree["service"]["port"]
    env_port = os.environ.get(cfg.ENV_PORT)
    if args.port is None and env_port:
        port = int(env_port)
    serve(
        engine,
        host=tree["service"]["host"],
        port=int(port),
        ttl=float(tree["service"]["session_ttl"]),
        max_sessions=int(tree["service"]["max_sessions"]),
    )
    return 0


def _rollout_configs(tree: dict[str, Any]) -> tuple[RolloutConfig, RewardConfig]:
    rollout_cfg = RolloutConfig(
        max_turns=int(tree["rollout"]["max_turns"]),
        k_retrieve=int(tree["retrieval"]["k_retrieve"]),
        k_final=int(tree["rewards"]["k_final"]),
        mask_history=bool(tree["retrieval"]["mask_history"]),
        seed=int(tree["rollout"]["seed"]),
        char_budget=int(tree["rollout"]["char_budget"]),
    )
    reward_cfg = RewardConfig(
        invocation_cap=int(tree["rewards"]["invocation_cap"]),
        k_final=int(tree["rewards"]["k_final"]),
        rank_step=float(tree["rewards"]["rank_step"]),
        stage=str(tree["rewards"]["stage"]),
    )
    return rollout_cfg, reward_cfg


def cmd_rollout(args: argparse.Namespace) -> int:
    tree = _tree_from_args(args)
    engine = cfg.build_engine(tree)
    samples = _load_samples(args.splits, args.split, args.limit)
    if not samples:
        raise DeepRecError(f"no samples with split tag {args.split!r} in {args.splits}")
    rollout_cfg, reward_cfg = _rollout_configs(tree)
    policy = make_policy(args.policy)
    results = run_batch(
        policy,
        samples,
        args.rollouts,
        engine.index,
        rollout_cfg,
        reward_cfg,
        engine.text_provider,
        jobs=_default_jobs(args),
    )
    write_records(args.out, (r.to_record() for r in results))
    ok = sum(1 for r in results if r.error is None)
    print(f"rollout: {ok}/{len(results)} episodes written to {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    tree = _tree_from_args(args)
    ks = sorted(int(k) for k in str(args.k).split(",") if k.strip())
    outdir = Path(args.out)
    rows: list[dict[str, Any]]

    if args.policy:
        engine = cfg.build_engine(tree)
        samples = _load_samples(args.splits, args.split, args.limit)
        if not samples:
            raise DeepRecError("eval --policy needs --splits with matching samples")
        rollout_cfg, reward_cfg = _rollout_configs(tree)
        if len(args.policy) == 1:
            from .rollout import run_batch as _run

            policy = make_policy(args.policy[0])
            results = _run(
                policy, samples, args.rollouts, engine.index, rollout_cfg,
                reward_cfg, engine.text_provider, jobs=_default_jobs(args),
            )
            metric = evaluation.evaluate_trajectories(results, ks, rollout_cfg.k_final)
            rows = [{"policy": args.policy[0], **metric.to_record()}]
        else:
            comparison = evaluation.compare_modes(
                args.policy, samples, engine.index, rollout_cfg, ks,
                rollouts_per_sample=args.rollouts, reward_config=reward_cfg,
                text_provider=engine.text_provider, jobs=_default_jobs(args),
            )
            rows = [row.to_record() for row in comparison]
    elif args.results:
        from .rollout import EpisodeResult

        results = [EpisodeResult.from_record(r) for r in read_records(args.results)]
        k_final = int(tree["rewards"]["k_final"])
        metric = evaluation.evaluate_trajectories(results, ks, k_final)
        rows = [{"policy": args.results, **metric.to_record()}]
    else:
        engine = cfg.build_engine(tree)
        samples = _load_samples(args.splits, args.split, args.limit) if args.splits else []
        if not samples:
            raise DeepRecError("eval needs --splits (retriever mode), --results, or --policy")
        metric = evaluation.evaluate_retriever(
            engine.index, samples, ks,
            mask_history=bool(tree["retrieval"]["mask_history"]),
        )
        rows = [{"policy": "retriever", **metric.to_record()}]

    write_records(outdir / "metrics.jsonl", rows)
    table = evaluation.format_table(rows)
    write_text_atomic(outdir / "metrics.txt", table)
    sys.stdout.write(table)
    if not args.no_figures:
        figures = report.save_metric_figures(rows, outdir / "figures", ks)
        print(f"eval: wrote {len(figures)} figures to {outdir / 'figures'}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    tree = _tree_from_args(args)
    engine = cfg.build_engine(tree)
    stage = args.stage or tree["rewards"]["stage"]
    reward_cfg = RewardConfig(
        invocation_cap=int(tree["rewards"]["invocation_cap"]),
        k_final=int(tree["rewards"]["k_final"]),
        rank_step=float(tree["rewards"]["rank_step"]),
        stage=stage,
    )
    out_rows: list[dict[str, Any]] = []
    for record in read_records(args.input):
        trajectory_rec = record.get("trajectory", record)
        raw_text = trajectory_rec.get("raw_text")
        if not isinstance(raw_text, str):
            raise DeepRecError("trajectory record is missing raw_text")
        label = args.label if args.label is not None else record.get("label")
        trajectory, rep = parse_trajectory(
            raw_text, engine.catalog, reward_cfg.k_final,
            history=trajectory_rec.get("history"),
        )
        breakdown = score_trajectory(
            trajectory, rep, label, engine.index, reward_cfg, engine.text_provider
        )
        out_rows.append(breakdown.to_record())
    if args.out:
        write_records(args.out, out_rows)
    else:
        from .records import dumps_record

        for row in out_rows:
            sys.stdout.write(dumps_record(row) + "\n")
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "select": cmd_select,
    "serve": cmd_serve,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "score": cmd_score,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DeepRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
