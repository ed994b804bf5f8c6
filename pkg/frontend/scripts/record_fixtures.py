"""Record golden fixtures for the SDK tests.

Builds the tiny fixture corpus, drives one full oracle session against the
engine's HTTP app, and snapshots every request/response pair plus the
in-process reference records and the CLI `score` output. Rerun after any
engine change that affects serialization:

    python3 frontend/scripts/record_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from deeprec.cli import main as cli_main
from deeprec.config import Engine
from deeprec.corpus import SplitSample, load_catalog
from deeprec.records import dumps_record, write_records
from deeprec.retrieval import (
    KIND_COLLABORATIVE,
    KIND_TEXTUAL,
    HashedTextProvider,
    RetrievalConfig,
    build_index,
    write_embedding_file,
)
from deeprec.rewards import RewardConfig
from deeprec.rollout import OraclePolicy, RolloutConfig, run_episode
from deeprec.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"
CORPUS = FIXTURES / "corpus"

N_ITEMS = 30
DIM = 32
LABEL = 7


def build_corpus() -> None:
    titles = [f"Fixture Game {i:02d}" for i in range(N_ITEMS)]
    write_records(
        CORPUS / "items.jsonl",
        ({"external_id": f"fx{i}", "title": t} for i, t in enumerate(titles)),
    )
    provider = HashedTextProvider(DIM)
    write_embedding_file(
        CORPUS / "collab.drec",
        KIND_COLLABORATIVE,
        np.stack([provider.embed("c::" + t).values for t in titles]).astype(np.float32),
    )
    write_embedding_file(
        CORPUS / "text.drec",
        KIND_TEXTUAL,
        np.stack([provider.embed(t).values for t in titles]).astype(np.float32),
    )


def build_engine() -> Engine:
    catalog = load_catalog(CORPUS / "items.jsonl")
    index = build_index(
        catalog, CORPUS / "collab.drec", CORPUS / "text.drec", RetrievalConfig()
    )
    return Engine(
        catalog=catalog,
        index=index,
        text_provider=HashedTextProvider(DIM),
        rollout_config=RolloutConfig(),
        reward_config=RewardConfig(stage="recommendation"),
    )


def main() -> int:
    CORPUS.mkdir(parents=True, exist_ok=True)
    build_corpus()
    engine = build_engine()
    client = TestClient(create_app(engine))
    sample = SplitSample("sdk-user", [], LABEL, "test")

    reference = run_episode(
        OraclePolicy(),
        sample,
        engine.index,
        engine.rollout_config,
        engine.reward_config,
        engine.text_provider,
    )

    exchanges = []
    create_body = {"history": [], "label": LABEL, "user_id": "sdk-user"}
    created = client.post("/v1/sessions", json=create_body)
    assert created.status_code == 201
    session = created.json()
    exchanges.append(
        {"endpoint": "create", "request": create_body, "response": session}
    )

    policy = OraclePolicy()
    policy.start_episode(sample, engine.catalog, engine.rollout_config, 0)
    context = session["initial_context"]
    terminal = None
    while terminal is None:
        text = policy.generate(context, [], 10_000)
        response = client.post(
            f"/v1/sessions/{session['session_id']}/continue", json={"text": text}
        )
        assert response.status_code == 200, response.text
        payload = response.json()
        exchanges.append(
            {"endpoint": "continue", "request": {"text": text}, "response": payload}
        )
        if payload["status"] == "retrieval":
            context += text + payload["injected_text"]
        else:
            terminal = payload

    score_body = {
        "trajectory": terminal["trajectory"],
        "label": LABEL,
        "stage": "recommendation",
    }
    score_response = client.post("/v1/score", json=score_body)
    assert score_response.status_code == 200
    exchanges.append(
        {
            "endpoint": "score",
            "request": score_body,
            "response": score_response.json(),
        }
    )

    # CLI `score` over the same trajectory record for the cross-path check
    batch_path = FIXTURES / "episode.jsonl"
    write_records(batch_path, [reference.to_record()])
    cli_out = FIXTURES / "cli_score.jsonl"
    code = cli_main(
        [
            "score",
            "--input", str(batch_path),
            "--stage", "recommendation",
            "--items", str(CORPUS / "items.jsonl"),
            "--collab", str(CORPUS / "collab.drec"),
            "--text", str(CORPUS / "text.drec"),
        ]
        + ["--out", str(cli_out)],
    )
    assert code == 0

    session_fixture = {
        "label": LABEL,
        "exchanges": exchanges,
        "reference": {
            "trajectory": reference.trajectory.to_record(),
            "report": reference.report.to_record(),
            "rewards": reference.rewards.to_record(),
        },
        "cli_score": json.loads(cli_out.read_text().strip()),
    }
    (FIXTURES / "session.json").write_text(
        json.dumps(session_fixture, indent=2, ensure_ascii=False) + "\n"
    )

    # sanity: server terminal result matches the in-process reference
    assert dumps_record(terminal["trajectory"]) == dumps_record(
        reference.trajectory.to_record()
    )
    assert dumps_record(terminal["rewards"]) == dumps_record(
        reference.rewards.to_record()
    )
    print(f"recorded {len(exchanges)} exchanges to {FIXTURES / 'session.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
