"""HTTP session service exposing the episode loop to external policies.

Sessions are in-memory with a TTL and a capacity bound. The server owns
the injections (clients cannot forge retrieved lists) and drives the same
Episode state machine as the in-process runner, so trajectories and reward
breakdowns are byte-identical across the two paths.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass
from typing import Any, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, PlainTextResponse

from .config import Engine
from .corpus import SplitSample
from .errors import ConfigError
from .protocol import parse_trajectory
from .rewards import (
    STAGE_COLD_START,
    STAGE_RECOMMENDATION,
    RewardConfig,
    score_trajectory,
)
from .rollout import Episode, RolloutConfig

STATE_AWAITING = "AwaitingGeneration"
STATE_TERMINAL = "Terminal"
STATE_ABORTED = "Aborted"

_SESSION_CONFIG_KEYS = {
    "k_final",
    "k_retrieve",
    "max_turns",
    "mask_history",
    "seed",
    "char_budget",
    "stage",
}


@dataclass
class Session:
    session_id: str
    episode: Episode
    state: str
    created_at: float
    expires_at: float
    lock: threading.Lock


class SessionStore:
    def __init__(self, ttl: float, capacity: int):
        self.ttl = ttl
        self.capacity = capacity
        self._sessions: dict[str, Session] = {}
        self._expired_ids: dict[str, None] = {}
        self._lock = threading.Lock()

    def _purge_locked(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items() if s.expires_at <= now]
        for sid in dead:
            self._sessions[sid].state = STATE_ABORTED
            del self._sessions[sid]
            self._expired_ids[sid] = None
        while len(self._expired_ids) > 4096:
            self._expired_ids.pop(next(iter(self._expired_ids)))

    def create(self, episode: Episode) -> Session:
        now = time.monotonic()
        with self._lock:
            self._purge_locked(now)
            if len(self._sessions) >= self.capacity:
                raise HTTPException(status_code=503, detail="session capacity reached")
            session = Session(
                session_id=uuid.uuid4().hex,
                episode=episode,
                state=STATE_AWAITING,
                created_at=now,
                expires_at=now + self.ttl,
                lock=threading.Lock(),
            )
            self._sessions[session.session_id] = session
            return session

    def get(self, session_id: str, refresh: bool = True) -> Session:
        now = time.monotonic()
        with self._lock:
            self._purge_locked(now)
            session = self._sessions.get(session_id)
            if session is None:
                if session_id in self._expired_ids:
                    raise HTTPException(status_code=410, detail="session expired")
                raise HTTPException(status_code=404, detail="unknown session")
            if refresh:
                session.expires_at = now + self.ttl
            return session


def _session_configs(
    engine: Engine, overrides: Optional[dict[str, Any]]
) -> tuple[RolloutConfig, RewardConfig]:
    overrides = overrides or {}
    unknown = set(overrides) - _SESSION_CONFIG_KEYS
    if unknown:
        raise HTTPException(
            status_code=422, detail=f"unknown config overrides: {sorted(unknown)}"
        )
    base_roll = engine.rollout_config
    base_reward = engine.reward_config
    try:
        rollout_cfg = RolloutConfig(
            max_turns=int(overrides.get("max_turns", base_roll.max_turns)),
            k_retrieve=int(overrides.get("k_retrieve", base_roll.k_retrieve)),
            k_final=int(overrides.get("k_final", base_roll.k_final)),
            mask_history=bool(overrides.get("mask_history", base_roll.mask_history)),
            seed=int(overrides.get("seed", base_roll.seed)),
            char_budget=int(overrides.get("char_budget", base_roll.char_budget)),
        )
        reward_cfg = RewardConfig(
            invocation_cap=base_reward.invocation_cap,
            k_final=int(overrides.get("k_final", base_reward.k_final)),
            rank_step=base_reward.rank_step,
            stage=str(overrides.get("stage", base_reward.stage)),
        )
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return rollout_cfg, reward_cfg


def _result_payload(status: str, result: Any) -> dict[str, Any]:
    return {
        "status": status,
        "trajectory": result.trajectory.to_record(),
        "report": result.report.to_record(),
        "rewards": result.rewards.to_record(),
        "truncated": result.truncated,
    }


def create_app(
    engine: Engine,
    session_ttl: float = 600.0,
    max_sessions: int = 1024,
) -> FastAPI:
    app = FastAPI(title="deeprec environment service")
    store = SessionStore(ttl=session_ttl, capacity=max_sessions)
    app.state.engine = engine
    app.state.store = store

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.get("/v1/items/{item_id}")
    def get_item(item_id: int) -> dict[str, Any]:
        if item_id not in engine.catalog:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id}")
        item = engine.catalog.items[item_id]
        return {
            "item_id": item.item_id,
            "external_id": item.external_id,
            "title": item.title,
            "aux_text": item.aux_text,
        }

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: dict[str, Any]) -> dict[str, Any]:
        history = body.get("history")
        if history is None and body.get("external_ids") is not None:
            history = []
            for ext in body["external_ids"]:
                item_id = engine.catalog.id_for_external(str(ext))
                if item_id is None:
                    raise HTTPException(
                        status_code=422, detail=f"unknown external id {ext!r}"
                    )
                history.append(item_id)
        if history is None:
            history = []
        for item_id in history:
            if item_id not in engine.catalog:
                raise HTTPException(status_code=422, detail=f"unknown item id {item_id}")

        label = body.get("label")
        if label is None and body.get("label_external_id") is not None:
            label = engine.catalog.id_for_external(str(body["label_external_id"]))
            if label is None:
                raise HTTPException(
                    status_code=422,
                    detail=f"unknown label external id {body['label_external_id']!r}",
                )
        if label is not None and label not in engine.catalog:
            raise HTTPException(status_code=422, detail=f"unknown label id {label}")

        rollout_cfg, reward_cfg = _session_configs(engine, body.get("config"))
        sample = SplitSample(
            user_id=str(body.get("user_id", "session")),
            history=[int(i) for i in history],
            label=int(label) if label is not None else -1,
            split="test",
        )
        episode = Episode(
            sample,
            engine.index,
            rollout_cfg,
            reward_cfg,
            engine.text_provider,
            seed=rollout_cfg.seed,
        )
        session = store.create(episode)
        return {
            "session_id": session.session_id,
            "system_prompt": episode.system_prompt,
            "initial_context": episode.context,
        }

    @app.post("/v1/sessions/{session_id}/continue")
    def continue_session(session_id: str, body: dict[str, Any]) -> dict[str, Any]:
        if "text" not in body or not isinstance(body["text"], str):
            raise HTTPException(status_code=400, detail="body needs a string 'text' field")
        session = store.get(session_id)
        with session.lock:
            if session.state != STATE_AWAITING:
                raise HTTPException(
                    status_code=409, detail=f"session is {session.state}"
                )
            outcome = session.episode.feed_generated(body["text"])
            if outcome.status == "retrieval":
                payload: dict[str, Any] = {
                    "status": "retrieval",
                    "injected_text": outcome.injected_text,
                    "items": [
                        {"item_id": i, "title": t, "score": s}
                        for i, t, s in outcome.items
                    ],
                }
            elif outcome.status in ("terminal", "truncated"):
                session.state = STATE_TERMINAL
                payload = _result_payload(outcome.status, outcome.result)
            else:
                payload = {"status": "incomplete"}
            if outcome.ignored_chars:
                payload["warning"] = (
                    f"ignored {outcome.ignored_chars} chars after stop marker"
                )
            return payload

    @app.get("/v1/sessions/{session_id}")
    def session_snapshot(session_id: str) -> dict[str, Any]:
        # reads must not mutate state, so no TTL refresh here
        session = store.get(session_id, refresh=False)
        episode = session.episode
        return {
            "session_id": session.session_id,
            "state": session.state,
            "m": episode.turns_done,
            "context_chars": len(episode.context),
            "raw_chars": len(episode.raw),
            "k_final": episode.config.k_final,
            "created_at": session.created_at,
            "expires_at": session.expires_at,
        }

    @app.post("/v1/score")
    def score(body: dict[str, Any]) -> JSONResponse:
        trajectory_rec = body.get("trajectory")
        if not isinstance(trajectory_rec, dict):
            return _score_error("trajectory", "must be a trajectory record object")
        raw_text = trajectory_rec.get("raw_text")
        if not isinstance(raw_text, str):
            return _score_error("trajectory.raw_text", "must be a string")
        label = body.get("label")
        if label is None:
            return _score_error("label", "is required")
        if not isinstance(label, int) or label not in engine.catalog:
            return _score_error("label", f"unknown item id {label!r}")
        stage = body.get("stage", engine.reward_config.stage)
        if stage not in (STAGE_COLD_START, STAGE_RECOMMENDATION):
            return _score_error("stage", f"unknown stage {stage!r}")
        k_final = body.get("k_final", engine.reward_config.k_final)
        history = trajectory_rec.get("history")
        trajectory, report = parse_trajectory(
            raw_text, engine.catalog, int(k_final), history=history
        )
        reward_cfg = RewardConfig(
            invocation_cap=engine.reward_config.invocation_cap,
            k_final=int(k_final),
            rank_step=engine.reward_config.rank_step,
            stage=stage,
        )
        breakdown = score_trajectory(
            trajectory, report, label, engine.index, reward_cfg, engine.text_provider
        )
        return JSONResponse(breakdown.to_record())

    def _score_error(field: str, message: str) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"error": message, "field": field}
        )

    return app


def serve(engine: Engine, host: str, port: int, ttl: float, max_sessions: int) -> None:
    import uvicorn

    app = create_app(engine, session_ttl=ttl, max_sessions=max_sessions)
    uvicorn.run(app, host=host, port=port, log_level="info")
