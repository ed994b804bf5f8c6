"""Shared synthetic corpora for the test suite."""

from __future__ import annotations

import random

import numpy as np
import pytest

from deeprec.corpus import Catalog, ItemRecord, SplitSample
from deeprec.retrieval import (
    EmbeddingMatrix,
    HashedTextProvider,
    RetrievalConfig,
    RetrievalIndex,
)


def make_catalog(n: int, title=lambda i: f"Item {i:04d}") -> Catalog:
    return Catalog([ItemRecord(i, f"ext-{i}", title(i)) for i in range(n)])


def hashed_index(
    catalog: Catalog,
    dim: int = 64,
    scoring: str = "cosine",
) -> tuple[RetrievalIndex, HashedTextProvider]:
    """Index whose textual rows are the hashed embeddings of the titles,
    so querying with an item's own title scores that item highest."""
    provider = HashedTextProvider(dim)
    text_rows = np.stack([provider.embed(it.title).values for it in catalog.items])
    collab_rows = np.stack(
        [provider.embed("collab::" + it.title).values for it in catalog.items]
    )
    index = RetrievalIndex(
        catalog,
        EmbeddingMatrix("collaborative", collab_rows),
        EmbeddingMatrix("textual", text_rows),
        RetrievalConfig(scoring=scoring),
    )
    return index, provider


def random_index(
    n: int, dim: int, seed: int, scoring: str = "cosine"
) -> tuple[RetrievalIndex, Catalog]:
    rng = np.random.default_rng(seed)
    catalog = make_catalog(n)
    collab = rng.standard_normal((n, dim))
    text = rng.standard_normal((n, dim))
    index = RetrievalIndex(
        catalog,
        EmbeddingMatrix("collaborative", collab),
        EmbeddingMatrix("textual", text),
        RetrievalConfig(scoring=scoring),
    )
    return index, catalog


@pytest.fixture
def one_hot_corpus():
    """60 items whose textual rows equal the hashed embedding of their own
    title and whose collaborative rows are a shared constant vector, so a
    preference equal to a title retrieves that item first."""
    catalog = make_catalog(60, title=lambda i: f"Game Title {i:03d}")
    provider = HashedTextProvider(64)
    text_rows = np.stack([provider.embed(it.title).values for it in catalog.items])
    shared = provider.embed("shared collaborative direction").values
    collab_rows = np.tile(shared, (60, 1))
    index = RetrievalIndex(
        catalog,
        EmbeddingMatrix("collaborative", collab_rows),
        EmbeddingMatrix("textual", text_rows),
    )
    return catalog, index, provider


CLUSTER_PREFS = (
    "moody tactical espionage thrillers",
    "bright cooperative farming adventures",
    "sprawling open world exploration epics",
)


@pytest.fixture
def clustered_corpus():
    """Three disjoint 20-item clusters; cluster c's textual rows all equal
    the hashed embedding of CLUSTER_PREFS[c], so each scripted preference
    retrieves exactly its own cluster (ties broken by item id)."""
    catalog = make_catalog(60, title=lambda i: f"Cluster {i // 20} Entry {i:03d}")
    provider = HashedTextProvider(64)
    pref_vectors = [provider.embed(p).values for p in CLUSTER_PREFS]
    # sanity: distinct preference embeddings (strictly below cosine 1)
    for a in range(3):
        for b in range(a + 1, 3):
            assert float(pref_vectors[a] @ pref_vectors[b]) < 0.99
    text_rows = np.stack([pref_vectors[i // 20] for i in range(60)])
    shared = provider.embed("shared collaborative direction").values
    collab_rows = np.tile(shared, (60, 1))
    index = RetrievalIndex(
        catalog,
        EmbeddingMatrix("collaborative", collab_rows),
        EmbeddingMatrix("textual", text_rows),
    )
    return catalog, index, provider


def empty_history_samples(catalog: Catalog, labels: list[int]) -> list[SplitSample]:
    return [
        SplitSample(user_id=f"u{i}", history=[], label=label, split="test")
        for i, label in enumerate(labels)
    ]


def random_chunks(text: str, rng: random.Random, max_chunk: int = 17) -> list[str]:
    chunks = []
    i = 0
    while i < len(text):
        size = rng.randint(1, max_chunk)
        chunks.append(text[i : i + size])
        i += size
    return chunks


def feed_all(parser, chunk: str) -> list:
    """Feed a chunk fully, re-feeding whatever a stop marker left over."""
    events = []
    rest = chunk
    while rest:
        result = parser.feed(rest)
        events.extend(result.events)
        rest = rest[result.consumed :]
    return events
