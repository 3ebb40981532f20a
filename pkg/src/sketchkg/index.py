"""Exact cosine top-k index over diagram embeddings, with binary persistence.

File layout (little-endian)::

    b"DRIN" | version u32 = 1 | dim u32 | count u64
    | has_fingerprint u32 | fingerprint u64
    | entries, encoded as in the embedding store
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .embed import EmbeddingVector, _check_batch, pack_entries, unpack_entries
from .exceptions import (
    BadMagic, DimMismatch, InputError, IoFailure, TruncatedFile, UnsupportedVersion, ZeroVector,
)

INDEX_MAGIC = b"DRIN"
INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIIQIQ")


@dataclass
class RetrievalIndex:
    dim: int
    ids: list
    matrix: np.ndarray  # (count, dim) float32, unit rows
    head_fingerprint: Optional[int] = None

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self):
        return [EmbeddingVector(i, row) for i, row in zip(self.ids, self.matrix)]


@dataclass
class QueryResult:
    query_id: str
    results: list  # [(id, score)]

    def to_dict(self):
        return {"query_id": self.query_id,
                "results": [{"id": i, "score": s} for i, s in self.results]}

    def to_json(self):
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    def to_tsv(self):
        return "".join(f"{self.query_id}\t{r}\t{i}\t{s!r}\n"
                       for r, (i, s) in enumerate(self.results, 1))


def _unit_rows(X, ids):
    norms = np.linalg.norm(X, axis=1)
    for i, n in enumerate(norms):
        if n == 0.0 or not np.isfinite(n):
            raise ZeroVector(ids[i])
    return X / norms[:, None]


def build_index(vectors, head=None, dim=None):
    """Project (optionally), L2-normalize and id-sort ``vectors``.

    ``dim`` is only needed to build an empty index.
    """
    vectors = list(vectors)
    _check_batch(vectors)
    fp = head.fingerprint() if head is not None else None
    if not vectors:
        out_dim = head.out_dim if head is not None else dim
        if out_dim is None:
            raise DimMismatch("dim is required for an empty index")
        return RetrievalIndex(int(out_dim), [], np.zeros((0, out_dim), dtype=np.float32), fp)
    vectors.sort(key=lambda v: v.id)
    ids = [v.id for v in vectors]
    X = np.stack([v.values for v in vectors]).astype(np.float64)
    if head is not None:
        X = head.apply(X)
    X = _unit_rows(X, ids).astype(np.float32)
    return RetrievalIndex(X.shape[1], ids, X, fp)


def score_all(index, query, head=None):
    """Cosine of ``query`` against every entry, in entry order (float64)."""
    q = np.asarray(query.values if isinstance(query, EmbeddingVector) else query,
                   dtype=np.float64).reshape(-1)
    if head is not None:
        q = head.apply(q)
    if q.shape[0] != index.dim:
        raise DimMismatch(f"query dim {q.shape[0]} != index dim {index.dim}")
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ZeroVector(getattr(query, "id", None))
    q = (q / n).astype(np.float32).astype(np.float64)
    # float32 x float32 products are exact in float64 and fsum rounds their sum once,
    # so every score is correctly rounded whatever the summation order
    prods = index.matrix.astype(np.float64) * q
    scores = np.array([math.fsum(row) for row in prods], dtype=np.float64)
    return np.clip(scores, -1.0, 1.0)


def rank_scores(ids, scores, k):
    """Indices of the top ``k`` by descending score, ties by ascending id."""
    order = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
    return order[:k]


def query_top_k(index, query, k=3, head=None):
    if k < 1:
        raise InputError("k must be >= 1")
    scores = score_all(index, query, head)
    top = rank_scores(index.ids, scores, k)
    qid = query.id if isinstance(query, EmbeddingVector) else ""
    return QueryResult(qid, [(index.ids[j], float(scores[j])) for j in top])


def index_to_bytes(index):
    fp = index.head_fingerprint
    head = _HEADER.pack(INDEX_MAGIC, INDEX_VERSION, index.dim, len(index),
                        0 if fp is None else 1, 0 if fp is None else fp)
    return head + pack_entries(index.entries)


def index_from_bytes(buf):
    if len(buf) < 4 or buf[:4] != INDEX_MAGIC:
        raise BadMagic("not a retrieval index")
    if len(buf) < _HEADER.size:
        raise TruncatedFile("header cut short", len(buf))
    _, version, dim, count, has_fp, fp = _HEADER.unpack_from(buf, 0)
    if version != INDEX_VERSION:
        raise UnsupportedVersion(f"index version {version}")
    entries, end = unpack_entries(buf, _HEADER.size, dim, count)
    if end != len(buf):
        raise InputError(f"{len(buf) - end} trailing bytes in index file")
    ids = [e.id for e in entries]
    matrix = (np.stack([e.values for e in entries]) if entries
              else np.zeros((0, dim), dtype=np.float32))
    return RetrievalIndex(dim, ids, matrix, fp if has_fp else None)


def save_index(index, path):
    data = index_to_bytes(index)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(data)


def load_index(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return index_from_bytes(buf)


class CosineRetriever(BaseEstimator):
    """``fit`` on a list of EmbeddingVector; ``predict`` returns top-k id lists."""

    def __init__(self, k=3, head=None):
        self.k = k
        self.head = head

    def fit(self, X, y=None):
        self.index_ = build_index(X, self.head)
        return self

    def predict(self, X):
        return [[i for i, _ in query_top_k(self.index_, q, self.k, self.head).results] for q in X]
