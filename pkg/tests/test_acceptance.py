"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline.
"""

from __future__ import annotations

import contextlib
import math
import random
import time

import numpy as np
import pytest

from deeprec.corpus import SplitSample, select_by_difficulty
from deeprec.evaluation import compare_modes, evaluate_retriever, evaluate_trajectories
from deeprec.protocol import (
    ALL_TAGS,
    PREF_CLOSE,
    PREF_OPEN,
    REC_CLOSE,
    REC_OPEN,
    THINK_CLOSE,
    THINK_OPEN,
    inject_item_list,
    parse_events,
    parse_trajectory,
)
from deeprec.records import dumps_record
from deeprec.retrieval import (
    EmbeddingMatrix,
    HashedTextProvider,
    RetrievalConfig,
    RetrievalIndex,
)
from deeprec.rewards import (
    RewardConfig,
    reward_diversity,
    reward_invocation,
    reward_point,
    reward_rank,
    score_trajectory,
)
from deeprec.rollout import OraclePolicy, RolloutConfig, run_batch, run_episode

from conftest import (
    CLUSTER_PREFS,
    empty_history_samples,
    feed_all,
    make_catalog,
    random_chunks,
    random_index,
)
from reference_scorer import reference_breakdown
from test_rewards import synthetic_trajectory
from deeprec.protocol import StreamParser


@contextlib.contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"FAIL: {name}")
        raise
    print(f"PASS: {name}")


class TestAcceptance:
    def test_reward_oracle_equivalence(self):
        with criterion("reward oracle equivalence (1000 trajectories, 1e-9, <5s)"):
            started = time.monotonic()
            rng = random.Random(101)
            n, dim = 50, 16
            catalog = make_catalog(n)
            gen = np.random.default_rng(102)
            index = RetrievalIndex(
                catalog,
                EmbeddingMatrix("collaborative", gen.standard_normal((n, dim))),
                EmbeddingMatrix("textual", gen.standard_normal((n, dim))),
            )
            provider = HashedTextProvider(dim)
            for trial in range(1000):
                trajectory, report = synthetic_trajectory(rng, n)
                label = rng.randrange(n)
                stage = "cold_start" if trial % 2 else "recommendation"
                config = RewardConfig(invocation_cap=3, k_final=10, stage=stage)
                ours = score_trajectory(
                    trajectory, report, label, index, config, provider
                ).to_record()
                expected = reference_breakdown(
                    trajectory,
                    report,
                    label,
                    [index.collab_row(i) for i in range(n)],
                    [index.text_row(i) for i in range(n)],
                    provider,
                    invocation_cap=3,
                    k_final=10,
                    rank_step=0.2,
                    stage=stage,
                    dim=dim,
                )
                for key, value in expected.items():
                    if isinstance(value, float):
                        assert abs(ours[key] - value) <= 1e-9, (trial, key)
                    else:
                        assert ours[key] == value
            elapsed = time.monotonic() - started
            assert elapsed < 5.0, f"took {elapsed:.2f}s"

    def test_closed_form_reward_points(self):
        with criterion("closed-form reward values (exact)"):
            assert reward_invocation(2, 3) == 0.5
            assert reward_invocation(3, 3) == 1.0
            assert reward_invocation(0, 3) == 0.0
            assert reward_invocation(0, 7) == 0.0

            final = list(range(10))
            assert reward_rank(final, final[0], k=10) == 2.0
            assert reward_rank(final, final[9], k=10) == pytest.approx(0.2)

            orthogonal = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
            assert reward_diversity(orthogonal) == 1.0

            catalog = make_catalog(2)
            rows = np.eye(2)
            index = RetrievalIndex(
                catalog,
                EmbeddingMatrix("collaborative", rows.copy()),
                EmbeddingMatrix("textual", rows.copy()),
            )
            assert reward_point([0, 1], 0, index) == 0.8

    def _well_formed_episode(self, rng: random.Random, catalog, titles):
        parts = [THINK_OPEN, "\n"]
        seen: list[str] = []
        m = rng.randint(1, 3)
        for i in range(m):
            parts.append(f"thought {i} {rng.random():.4f}\n")
            parts.append(PREF_OPEN + f"pref {i} {rng.random():.4f}" + PREF_CLOSE)
            turn_titles = rng.sample(titles, 6)
            seen.extend(turn_titles)
            parts.append("\n" + inject_item_list(turn_titles) + "\n")
        parts.append("wrap up\n" + THINK_CLOSE + "\n" + REC_OPEN + "\n")
        final = []
        for title in seen:
            if title not in final:
                final.append(title)
            if len(final) == 3:
                break
        parts.append("\n".join(final) + "\n" + REC_CLOSE)
        return "".join(parts)

    def test_parser_fuzz(self):
        with criterion(
            "parser fuzz: 10k chunking-invariant episodes, 10k mutations -> format -1 (<30s)"
        ):
            started = time.monotonic()
            catalog = make_catalog(300, title=lambda i: f"Fuzz Title {i:03d}")
            titles = [it.title for it in catalog.items]
            rng = random.Random(7)

            for _ in range(10_000):
                raw = self._well_formed_episode(rng, catalog, titles)
                single = parse_events(raw)
                assert "".join(e.payload for e in single) == raw
                parser = StreamParser()
                streamed = []
                for chunk in random_chunks(raw, rng, max_chunk=23):
                    streamed.extend(feed_all(parser, chunk))
                streamed.extend(parser.finish())
                assert streamed == list(single)

            for _ in range(10_000):
                raw = self._well_formed_episode(rng, catalog, titles)
                present = [t for t in ALL_TAGS if t in raw]
                tag = rng.choice(present)
                if rng.random() < 0.5:
                    mutated = raw.replace(tag, "", 1)
                else:
                    cut = rng.randrange(len(tag))
                    mutated = raw.replace(tag, tag[:cut] + "#" + tag[cut + 1 :], 1)
                _, report = parse_trajectory(mutated, catalog, k=3)
                assert not report.overall_ok, (tag, mutated[:120])
            elapsed = time.monotonic() - started
            assert elapsed < 30.0, f"took {elapsed:.2f}s"

    def test_retrieval_oracle(self):
        with criterion(
            "retrieval oracle: N=10000 dim=64, 1000 fused queries == exhaustive scan (<10s)"
        ):
            started = time.monotonic()
            index, _ = random_index(10_000, 64, seed=11)
            provider = HashedTextProvider(64)
            rng = np.random.default_rng(12)
            ids = np.arange(10_000)
            for trial in range(1000):
                history = [int(i) for i in rng.choice(10_000, size=3, replace=False)]
                h_hist = index.encode_history(history)
                h_text = provider.embed(f"query text {trial}").values
                query = index.fuse(h_hist, h_text)

                ours = index.retrieve_top_k(query, k=20)
                scores = index.scores(query)
                full_order = np.lexsort((ids, -scores))
                assert [i for i, _ in ours] == [int(i) for i in full_order[:20]]
                assert all(s == float(scores[i]) for i, s in ours)

                target = int(full_order[rng.integers(0, 20)])
                full_rank = int(np.flatnonzero(full_order == target)[0]) + 1
                assert index.rank_of(query, target) == full_rank

                if trial % 100 == 0:
                    scaled = index.retrieve_top_k(query * 37.5, k=20)
                    assert [i for i, _ in scaled] == [i for i, _ in ours]
            elapsed = time.monotonic() - started
            assert elapsed < 10.0, f"took {elapsed:.2f}s"

    def test_difficulty_filter(self):
        with criterion(
            "difficulty filter: 5000 samples, retained iff recomputed rank <= 100 (exact)"
        ):
            n = 2000
            index, _ = random_index(n, 32, seed=21)
            rng = np.random.default_rng(22)
            samples = [
                SplitSample(
                    user_id=f"u{i}",
                    history=[int(x) for x in rng.choice(n, size=4, replace=False)],
                    label=int(rng.integers(0, n)),
                    split="train",
                )
                for i in range(5000)
            ]
            kept = select_by_difficulty(samples, index, max_rank=100)
            kept_by_user = {s.user_id: s for s in kept}
            ids = np.arange(n)
            for sample in samples:
                vec = index.encode_history(sample.history, user_id=sample.user_id)
                scores = index.scores(vec)
                mask = set(sample.history) - {sample.label}
                order = [int(i) for i in np.lexsort((ids, -scores)) if int(i) not in mask]
                rank = order.index(sample.label) + 1
                if rank <= 100:
                    assert sample.user_id in kept_by_user, sample.user_id
                    assert kept_by_user[sample.user_id].difficulty_rank == rank
                else:
                    assert sample.user_id not in kept_by_user, sample.user_id

    def test_metric_oracle(self):
        with criterion("metric oracle: hand-computed recall/NDCG to 1e-12"):
            assert 1.0 / math.log2(3 + 1) == 0.5

            n = 10
            catalog = make_catalog(n)
            rows = np.diag([float(n - i) for i in range(n)])
            ones = np.ones(n)
            from deeprec.retrieval import user_key

            index = RetrievalIndex(
                catalog,
                EmbeddingMatrix("collaborative", rows.copy()),
                EmbeddingMatrix("textual", rows.copy()),
                RetrievalConfig(scoring="dot"),
                user_vectors={user_key(str(i)): ones for i in range(4)},
            )
            # item i scores n-i against the all-ones query: item 0 -> rank 1,
            # item 2 -> rank 3, item 4 -> rank 5, item 7 -> rank 8
            samples = [
                SplitSample("0", [9], 0, "test"),
                SplitSample("1", [9], 2, "test"),
                SplitSample("2", [9], 4, "test"),
                SplitSample("3", [9], 7, "test"),
            ]
            report = evaluate_retriever(index, samples, ks=(5, 10), mask_history=False)
            assert abs(report.recall[5] - 3 / 4) < 1e-12
            assert abs(report.recall[10] - 1.0) < 1e-12
            expected_ndcg5 = (1.0 + 0.5 + 1 / math.log2(6)) / 4
            expected_ndcg10 = (1.0 + 0.5 + 1 / math.log2(6) + 1 / math.log2(9)) / 4
            assert abs(report.ndcg[5] - expected_ndcg5) < 1e-12
            assert abs(report.ndcg[10] - expected_ndcg10) < 1e-12
            assert report.recall[5] <= report.recall[10]
            assert report.ndcg[5] <= report.ndcg[10]

    def test_end_to_end_scripted_episodes(self, one_hot_corpus, clustered_corpus, tmp_path):
        with criterion(
            "end-to-end: oracle hit/rank/recall; 3-turn coverage 60 vs 20 and recall order (<30s)"
        ):
            started = time.monotonic()
            catalog, index, provider = one_hot_corpus
            samples = empty_history_samples(catalog, [3, 17, 29, 41, 55])
            results = run_batch(
                OraclePolicy(), samples, 1, index,
                RolloutConfig(), RewardConfig(stage="recommendation"), provider,
            )
            for result in results:
                assert result.report.overall_ok
                assert result.rewards.hit == 1.0
                assert result.rewards.rank == 2.0
            report = evaluate_trajectories(results, ks=(5, 10), k_final=10)
            assert report.recall[10] == 1.0

            import json

            c_catalog, c_index, c_provider = clustered_corpus
            one_turn = {
                "turns": [{"thought": "a", "preference": CLUSTER_PREFS[0]}],
                "final_titles": [c_catalog.title_of(i) for i in range(10)],
            }
            three_turn = {
                "turns": [
                    {"thought": f"a{i}", "preference": p}
                    for i, p in enumerate(CLUSTER_PREFS)
                ],
                "final_titles": [c_catalog.title_of(25)]
                + [c_catalog.title_of(i) for i in range(9)],
            }
            p1 = tmp_path / "one.json"
            p3 = tmp_path / "three.json"
            p1.write_text(json.dumps(one_turn))
            p3.write_text(json.dumps(three_turn))
            rows = compare_modes(
                [f"template:{p1}", f"template:{p3}"],
                empty_history_samples(c_catalog, [25]),  # label in cluster 2
                c_index,
                RolloutConfig(),
                ks=(5, 10),
                text_provider=c_provider,
            )
            one, three = rows[0].report, rows[1].report
            assert three.mean_m == 3.0
            assert three.invocation_hist == {3: 1}
            assert one.coverage == 20.0
            assert three.coverage == 60.0
            assert three.recall[10] > one.recall[10]
            elapsed = time.monotonic() - started
            assert elapsed < 30.0, f"took {elapsed:.2f}s"

    def test_determinism(self, tmp_path, one_hot_corpus):
        with criterion(
            "determinism: rollout --seed 7 twice byte-identical; HTTP == in-process"
        ):
            import json

            import numpy as np

            from deeprec.cli import main
            from deeprec.records import write_records
            from deeprec.retrieval import (
                KIND_COLLABORATIVE,
                KIND_TEXTUAL,
                write_embedding_file,
            )

            # CLI double run over a small real corpus on disk
            n, dim = 30, 32
            titles = [f"Det Game {i:02d}" for i in range(n)]
            items = tmp_path / "items.jsonl"
            write_records(
                items,
                ({"external_id": f"d{i}", "title": t} for i, t in enumerate(titles)),
            )
            provider = HashedTextProvider(dim)
            write_embedding_file(
                tmp_path / "c.drec",
                KIND_COLLABORATIVE,
                np.stack([provider.embed("c" + t).values for t in titles]).astype(
                    np.float32
                ),
            )
            write_embedding_file(
                tmp_path / "t.drec",
                KIND_TEXTUAL,
                np.stack([provider.embed(t).values for t in titles]).astype(np.float32),
            )
            splits = tmp_path / "splits.jsonl"
            write_records(
                splits,
                (
                    SplitSample(f"u{i}", [i, i + 1], i + 2, "test").to_record()
                    for i in range(8)
                ),
            )
            flags = [
                "--items", str(items),
                "--collab", str(tmp_path / "c.drec"),
                "--text", str(tmp_path / "t.drec"),
            ]
            out_a, out_b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
            base = [
                "rollout", "--policy", "random:5", "--splits", str(splits),
                "--rollouts", "2", "--seed", "7", "--jobs", "2",
            ] + flags
            assert main(base + ["--out", str(out_a)]) == 0
            assert main(base + ["--out", str(out_b)]) == 0
            assert out_a.read_bytes() == out_b.read_bytes()

            # HTTP dual-path equivalence
            from fastapi.testclient import TestClient

            from deeprec.config import Engine
            from deeprec.service import create_app

            catalog, index, prov = one_hot_corpus
            engine = Engine(
                catalog=catalog,
                index=index,
                text_provider=prov,
                rollout_config=RolloutConfig(),
                reward_config=RewardConfig(stage="recommendation"),
            )
            client = TestClient(create_app(engine))
            sample = SplitSample("u0", [], 7, "test")
            local = run_episode(
                OraclePolicy(), sample, index,
                engine.rollout_config, engine.reward_config, prov,
            )
            created = client.post(
                "/v1/sessions",
                json={"history": [], "label": 7, "user_id": "u0"},
            )
            body = created.json()
            context, sid = body["initial_context"], body["session_id"]
            policy = OraclePolicy()
            policy.start_episode(sample, catalog, engine.rollout_config, 0)
            payload = None
            while True:
                text = policy.generate(context, [], 10_000)
                payload = client.post(
                    f"/v1/sessions/{sid}/continue", json={"text": text}
                ).json()
                if payload["status"] == "retrieval":
                    context += text + payload["injected_text"]
                else:
                    break
            assert dumps_record(payload["trajectory"]) == dumps_record(
                local.trajectory.to_record()
            )
            assert dumps_record(payload["rewards"]) == dumps_record(
                local.rewards.to_record()
            )
