"""Preference-aware retrieval over the full item space.

Queries are built by fusing a history encoding (decayed mean of
collaborative rows, or precomputed per-user vectors) with a text embedding
of the generated preference. Items are scored by the mean of their
collaborative and textual similarity to the query; scoring is exhaustive
(no ANN), which keeps oracle equality exact.

Embedding file format (little-endian): magic ``DREC``, version u32=1,
kind u8 (0 collaborative, 1 textual, 2 per-user), count u64, dim u32, then
count x dim float32 values row-major, row i aligned to item_id i. Per-user
files carry count u64 user keys between the header and the vectors;
numeric user ids are their own key, other ids hash via blake2b-8.
"""

from __future__ import annotations

import hashlib
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, EmbeddingFileError, PolicyTransportError, RetrievalError

MAGIC = b"DREC"
VERSION = 1
KIND_COLLABORATIVE = 0
KIND_TEXTUAL = 1
KIND_USER = 2
_HEADER = struct.Struct("<4sIBQI")


def write_embedding_file(
    path: str | Path,
    kind: int,
    rows: np.ndarray,
    user_keys: Optional[Sequence[int]] = None,
) -> None:
    rows = np.asarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise EmbeddingFileError("embedding rows must be a 2-d array")
    count, dim = rows.shape
    if kind == KIND_USER:
        if user_keys is None or len(user_keys) != count:
            raise EmbeddingFileError("per-user file needs one key per row")
    elif user_keys is not None:
        raise EmbeddingFileError("user keys only belong in kind-2 files")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind, count, dim))
        if kind == KIND_USER:
            fh.write(np.asarray(user_keys, dtype="<u8").tobytes())
        fh.write(rows.tobytes())


def read_embedding_file(path: str | Path) -> tuple[int, np.ndarray, Optional[np.ndarray]]:
    """Returns (kind, rows float32, user_keys or None)."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise EmbeddingFileError(f"{path}: truncated header")
        magic, version, kind, count, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise EmbeddingFileError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise EmbeddingFileError(f"{path}: unsupported version {version}")
        keys = None
        if kind == KIND_USER:
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise EmbeddingFileError(f"{path}: truncated user-key table")
            keys = np.frombuffer(raw, dtype="<u8").copy()
        data = fh.read()
    expected = count * dim * 4
    if len(data) != expected:
        raise EmbeddingFileError(
            f"{path}: expected {expected} bytes of vector data, got {len(data)}"
        )
    rows = np.frombuffer(data, dtype="<f4").reshape(count, dim).copy()
    return kind, rows, keys


def user_key(user_id: str) -> int:
    """Stable u64 key for a user id; numeric ids map to themselves."""
    if user_id.isdigit():
        value = int(user_id)
        if value < 2**64:
            return value
    digest = hashlib.blake2b(user_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class EmbeddingMatrix:
    kind: str  # collaborative | textual
    rows: np.ndarray  # N x dim float64

    def __post_init__(self) -> None:
        if self.rows.ndim != 2:
            raise EmbeddingFileError(f"{self.kind}: rows must be 2-d")
        if not np.all(np.isfinite(self.rows)):
            raise EmbeddingFileError(f"{self.kind}: non-finite embedding values")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class PreferenceVector:
    values: np.ndarray
    source: str  # hashed_fallback | external_file | remote_service


class HashedTextProvider:
    """Deterministic character-trigram feature hashing with +/-1 signs.

    Offline-safe stand-in for a real text encoder: not semantically
    meaningful, but stable across runs and platforms, which is what the
    engine's plumbing and tests need.
    """

    source = "hashed_fallback"

    def __init__(self, dim: int, ngram: int = 3):
        if dim < 1:
            raise ConfigError("embedding dim must be >= 1")
        self.dim = dim
        self.ngram = ngram

    def embed(self, text: str) -> PreferenceVector:
        if not text:
            raise ValueError("cannot embed empty text")
        values = np.zeros(self.dim, dtype=np.float64)
        n = self.ngram
        grams = (
            [text[i : i + n] for i in range(len(text) - n + 1)]
            if len(text) >= n
            else [text]
        )
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            bucket = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 == 0 else -1.0
            values[bucket] += sign
        norm = float(np.linalg.norm(values))
        if norm > 0:
            values /= norm
        return PreferenceVector(values, self.source)


class FileTextProvider:
    """Exact-match lookup of precomputed text embeddings (JSONL records)."""

    source = "external_file"

    def __init__(self, path: str | Path, dim: int):
        from .records import read_records

        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        for record in read_records(path):
            vec = np.asarray(record["vector"], dtype=np.float64)
            if vec.shape != (dim,):
                raise ConfigError(
                    f"{path}: vector for {record['text']!r} has dim {vec.shape}, want {dim}"
                )
            self._vectors[record["text"].strip()] = vec

    def embed(self, text: str) -> PreferenceVector:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = self._vectors.get(text.strip())
        if vec is None:
            raise ConfigError(f"no precomputed embedding for text {text!r}")
        return PreferenceVector(vec, self.source)


class RemoteTextProvider:
    """HTTP text-embedding service: POST {text} -> {vector}."""

    source = "remote_service"

    def __init__(self, url: str, dim: int, timeout: float = 10.0, retries: int = 2):
        self.url = url
        self.dim = dim
        self.timeout = timeout
        self.retries = retries

    def embed(self, text: str) -> PreferenceVector:
        import httpx

        if not text:
            raise ValueError("cannot embed empty text")
        last: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                response = httpx.post(
                    self.url, json={"text": text}, timeout=self.timeout
                )
                response.raise_for_status()
                vec = np.asarray(response.json()["vector"], dtype=np.float64)
                if vec.shape != (self.dim,):
                    raise ConfigError(
                        f"embedding service returned dim {vec.shape}, want {self.dim}"
                    )
                return PreferenceVector(vec, self.source)
            except ConfigError:
                raise
            except Exception as exc:  # transport-level: retry then surface
                last = exc
                if attempt < self.retries:
                    time.sleep(0.05 * (attempt + 1))
        raise PolicyTransportError(f"embedding service unreachable: {last}")


@dataclass(frozen=True)
class RetrievalConfig:
    scoring: str = "cosine"  # cosine | dot
    gamma: float = 0.8
    user_vectors_file: Optional[str] = None

    def __post_init__(self) -> None:
        if self.scoring not in ("cosine", "dot"):
            raise ConfigError(f"unknown scoring mode {self.scoring!r}")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")


class RetrievalIndex:
    """Immutable fused-scoring index over the catalog.

    In cosine mode all rows are unit-normalized at build time and queries
    are normalized per call, making rankings invariant to positive scaling
    of the query. Ties break by ascending item id.
    """

    def __init__(
        self,
        catalog: Any,
        collaborative: EmbeddingMatrix,
        textual: EmbeddingMatrix,
        config: RetrievalConfig = RetrievalConfig(),
        user_vectors: Optional[dict[int, np.ndarray]] = None,
    ):
        n = len(catalog)
        for matrix in (collaborative, textual):
            if len(matrix) != n:
                raise EmbeddingFileError(
                    f"{matrix.kind} matrix has {len(matrix)} rows for {n} items"
                )
        if collaborative.dim != textual.dim:
            raise EmbeddingFileError(
                f"dim mismatch: collaborative {collaborative.dim} vs textual {textual.dim}"
            )
        self.catalog = catalog
        self.config = config
        self.dim = collaborative.dim
        self._collab = self._prepare_rows(collaborative)
        self._text = self._prepare_rows(textual)
        self._user_vectors = user_vectors or {}
        for rows in (self._collab, self._text):
            rows.setflags(write=False)

    def _prepare_rows(self, matrix: EmbeddingMatrix) -> np.ndarray:
        rows = np.asarray(matrix.rows, dtype=np.float64).copy()
        if self.config.scoring == "cosine":
            norms = np.linalg.norm(rows, axis=1)
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise EmbeddingFileError(
                    f"{matrix.kind} row for item {int(zero[0])} is all zeros; "
                    "cosine mode cannot normalize it"
                )
            rows /= norms[:, None]
        return rows

    def __len__(self) -> int:
        return self._collab.shape[0]

    def collab_row(self, item_id: int) -> np.ndarray:
        return self._collab[item_id]

    def text_row(self, item_id: int) -> np.ndarray:
        return self._text[item_id]

    def _maybe_normalize(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise RetrievalError(f"query has dim {vec.shape}, index wants {self.dim}")
        if self.config.scoring == "cosine":
            norm = float(np.linalg.norm(vec))
            if norm > 0:
                return vec / norm
        return vec

    def encode_history(
        self, history: Sequence[int], user_id: Optional[str] = None
    ) -> np.ndarray:
        """History encoding: per-user vector when available, else a
        decayed mean of collaborative rows (weight gamma^(n-i), most
        recent item weighted 1). Empty history encodes to zeros so fusion
        degrades to pure text retrieval."""
        if user_id is not None and self._user_vectors:
            vec = self._user_vectors.get(user_key(user_id))
            if vec is not None:
                return self._maybe_normalize(vec)
        if not history:
            return np.zeros(self.dim, dtype=np.float64)
        n = len(history)
        weights = self.config.gamma ** np.arange(n - 1, -1, -1, dtype=np.float64)
        vec = weights @ self._collab[list(history)] / weights.sum()
        return self._maybe_normalize(vec)

    def fuse(self, h_history: np.ndarray, h_text: np.ndarray) -> np.ndarray:
        """Average the history and text encodings into one query."""
        a = np.asarray(h_history, dtype=np.float64)
        b = np.asarray(h_text, dtype=np.float64)
        if a.shape != b.shape:
            raise RetrievalError(f"fuse dim mismatch: {a.shape} vs {b.shape}")
        return self._maybe_normalize(0.5 * (a + b))

    def scores(self, query: np.ndarray) -> np.ndarray:
        """Mean of collaborative and textual similarity, all items."""
        q = self._maybe_normalize(query)
        return 0.5 * (self._collab @ q + self._text @ q)

    def retrieve_top_k(
        self,
        query: np.ndarray,
        k: int = 20,
        mask: Optional[Iterable[int]] = None,
    ) -> list[tuple[int, float]]:
        if k < 1:
            raise RetrievalError(f"k must be >= 1, got {k}")
        scores = self.scores(query)
        n = scores.shape[0]
        if mask:
            mask_idx = np.fromiter(mask, dtype=np.int64)
            keep = np.ones(n, dtype=bool)
            keep[mask_idx] = False
            candidates = np.flatnonzero(keep)
        else:
            candidates = np.arange(n)
        if candidates.size == 0:
            return []
        cand_scores = scores[candidates]
        if k < candidates.size:
            # exact top-k: partition to find the kth score, keep all ties,
            # then sort the small candidate set by (-score, id)
            thresh = np.partition(cand_scores, candidates.size - k)[
                candidates.size - k
            ]
            chosen = candidates[cand_scores >= thresh]
        else:
            chosen = candidates
        order = np.lexsort((chosen, -scores[chosen]))
        top = chosen[order][:k]
        return [(int(i), float(scores[i])) for i in top]

    def rank_of(
        self,
        query: np.ndarray,
        target: int,
        mask: Optional[Iterable[int]] = None,
    ) -> int:
        """1-based full-space rank of ``target`` under top-k ordering."""
        n = len(self)
        if not (0 <= target < n):
            raise RetrievalError(f"unknown target item {target}")
        mask_set = set(mask) if mask else set()
        if target in mask_set:
            raise RetrievalError(f"target item {target} is masked")
        scores = self.scores(query)
        if mask_set:
            keep = np.ones(n, dtype=bool)
            keep[np.fromiter(mask_set, dtype=np.int64)] = False
        else:
            keep = np.ones(n, dtype=bool)
        target_score = scores[target]
        better = np.count_nonzero(keep & (scores > target_score))
        tied_before = np.count_nonzero(
            keep & (scores == target_score) & (np.arange(n) < target)
        )
        return int(better + tied_before + 1)


def build_index(
    catalog: Any,
    collab_file: str | Path,
    text_file: str | Path,
    config: RetrievalConfig = RetrievalConfig(),
) -> RetrievalIndex:
    """Load both embedding files and assemble the index."""
    kind_c, rows_c, _ = read_embedding_file(collab_file)
    if kind_c != KIND_COLLABORATIVE:
        raise EmbeddingFileError(f"{collab_file}: expected collaborative kind 0, got {kind_c}")
    kind_t, rows_t, _ = read_embedding_file(text_file)
    if kind_t != KIND_TEXTUAL:
        raise EmbeddingFileError(f"{text_file}: expected textual kind 1, got {kind_t}")
    user_vectors = None
    if config.user_vectors_file:
        kind_u, rows_u, keys = read_embedding_file(config.user_vectors_file)
        if kind_u != KIND_USER or keys is None:
            raise EmbeddingFileError(
                f"{config.user_vectors_file}: expected per-user kind 2 with key table"
            )
        user_vectors = {
            int(key): rows_u[i].astype(np.float64) for i, key in enumerate(keys)
        }
    return RetrievalIndex(
        catalog,
        EmbeddingMatrix("collaborative", rows_c.astype(np.float64)),
        EmbeddingMatrix("textual", rows_t.astype(np.float64)),
        config,
        user_vectors,
    )


def make_text_provider(spec: str, dim: int) -> Any:
    """Provider factory: ``hashed``, ``file:<path>``, or ``remote:<url>``."""
    if spec == "hashed":
        return HashedTextProvider(dim)
    if spec.startswith("file:"):
        return FileTextProvider(spec[len("file:") :], dim)
    if spec.startswith("remote:"):
        return RemoteTextProvider(spec[len("remote:") :], dim)
    raise ConfigError(f"unknown text provider spec {spec!r}")
