"""Engine configuration: one JSON key-value tree covering all modules.

Precedence everywhere: built-in defaults < config file < explicit flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .corpus import Catalog, load_catalog
from .errors import ConfigError
from .retrieval import RetrievalConfig, RetrievalIndex, build_index, make_text_provider
from .rewards import RewardConfig
from .rollout import RolloutConfig

ENV_PORT = "DEEPREC_PORT"
ENV_CONFIG = "DEEPREC_CONFIG"

DEFAULTS: dict[str, Any] = {
    "corpus": {
        "items": None,
        "interactions": None,
        "min_count": 5,
        "min_rating": 3.0,
        "max_len": 20,
    },
    "embeddings": {
        "collaborative": None,
        "textual": None,
        "user_vectors": None,
    },
    "retrieval": {
        "scoring": "cosine",
        "gamma": 0.8,
        "k_retrieve": 20,
        "mask_history": True,
    },
    "rewards": {
        "invocation_cap": 3,
        "k_final": 10,
        "rank_step": 0.2,
        "stage": "cold_start",
    },
    "rollout": {
        "max_turns": 8,
        "char_budget": 32768,
        "seed": 0,
    },
    "text_provider": "hashed",
    "service": {
        "host": "127.0.0.1",
        "port": 8151,
        "session_ttl": 600.0,
        "max_sessions": 1024,
    },
}


def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_tree(path: Optional[str | Path] = None) -> dict[str, Any]:
    """Defaults merged with the JSON config file (path or DEEPREC_CONFIG)."""
    tree = DEFAULTS
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        tree = _deep_merge(tree, loaded)
    return tree


@dataclass
class Engine:
    """Catalog, index, provider, and the per-module configs, assembled."""

    catalog: Catalog
    index: RetrievalIndex
    text_provider: Any
    rollout_config: RolloutConfig
    reward_config: RewardConfig
    config_tree: dict[str, Any] = field(default_factory=dict)


def build_engine(tree: dict[str, Any]) -> Engine:
    """Load catalog + embeddings and wire the engine per the config tree."""
    items_path = tree["corpus"]["items"]
    if not items_path:
        raise ConfigError("config corpus.items is required to build the engine")
    collab = tree["embeddings"]["collaborative"]
    textual = tree["embeddings"]["textual"]
    if not collab or not textual:
        raise ConfigError("config embeddings.collaborative and embeddings.textual are required")
    catalog = load_catalog(items_path)
    retrieval_cfg = RetrievalConfig(
        scoring=tree["retrieval"]["scoring"],
        gamma=float(tree["retrieval"]["gamma"]),
        user_vectors_file=tree["embeddings"].get("user_vectors"),
    )
    index = build_index(catalog, collab, textual, retrieval_cfg)
    provider = make_text_provider(tree["text_provider"], index.dim)
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
    return Engine(
        catalog=catalog,
        index=index,
        text_provider=provider,
        rollout_config=rollout_cfg,
        reward_config=reward_cfg,
        config_tree=tree,
    )
