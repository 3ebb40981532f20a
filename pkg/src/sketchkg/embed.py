"""Base embedding vectors: a local feature-hash embedder, a remote client, and a binary store.

Store layout (all integers little-endian)::

    b"DRIX" | version u32 = 1 | dim u32 | count u64
    then per entry, sorted by id:
    id_len u32 | id (UTF-8) | dim x float32
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    BadMagic, DimMismatch, DuplicateId, InputError, IoFailure, TruncatedFile, UnsupportedVersion,
)
from .hashing import fnv1a_64
from .kg import graph_to_dict

logger = logging.getLogger(__name__)

EMBED_MAGIC = b"DRIX"
EMBED_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")


@dataclass
class EmbeddingVector:
    id: str
    values: np.ndarray  # float32, shape (dim,)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise InputError(f"vector {self.id!r} has non-finite values")

    @property
    def dim(self):
        return int(self.values.shape[0])


def _degree_bucket(d):
    return str(d) if d < 3 else "3+"


def graph_tokens(g):
    """The token set hashed by :func:`embed_feature_hash`."""
    nodes = g.node_map()
    tokens = set()
    deg = dict.fromkeys(nodes, 0)
    for n in g.nodes:
        tokens.update(w.lower() for w in n.name.split())
        tokens.add(n.node_type)
        tokens.add(n.shape)
    for gr in g.groups:
        tokens.update(w.lower() for w in gr.label.split())
    for e in g.edges:
        tokens.add(f"edge:{nodes[e.source].node_type}>{nodes[e.target].node_type}")
        deg[e.source] += 1
        deg[e.target] += 1
    tokens.update(f"deg:{_degree_bucket(d)}" for d in deg.values())
    if nodes:
        tokens.add(f"flow:{g.layout.flow_direction}")
    return tokens


def embed_feature_hash(g, dim=256, item_id=None):
    """Signed feature hashing of :func:`graph_tokens`, L2-normalized.

    Each token adds +1 or -1 (FNV-1a bit 63) at index ``hash % dim``.  An
    empty graph maps to the zero vector.
    """
    if dim < 8:
        raise ValueError("dim must be at least 8")
    acc = np.zeros(dim, dtype=np.float64)
    for tok in sorted(graph_tokens(g)):
        h = fnv1a_64(tok)
        acc[h % dim] += -1.0 if h >> 63 else 1.0
    norm = math.sqrt(math.fsum(acc * acc))
    if norm > 0:
        acc /= norm
    return EmbeddingVector(item_id if item_id is not None else g.diagram_id, acc)


class FeatureHashEmbedder(BaseEstimator, TransformerMixin):
    """Graphs -> (n, dim) float32 matrix of feature-hash embeddings."""

    def __init__(self, dim=256):
        self.dim = dim

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return np.stack([embed_feature_hash(g, self.dim).values for g in X]) if len(X) else \
            np.zeros((0, self.dim), dtype=np.float32)


def _check_batch(vectors):
    dims = {v.dim for v in vectors}
    if len(dims) > 1:
        raise DimMismatch(f"vectors have mixed dims {sorted(dims)}")
    seen = set()
    for v in vectors:
        if v.id in seen:
            raise DuplicateId(v.id)
        seen.add(v.id)


def pack_entries(vectors):
    parts = []
    for v in sorted(vectors, key=lambda v: v.id):
        raw_id = v.id.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_id)))
        parts.append(raw_id)
        parts.append(v.values.astype("<f4").tobytes())
    return b"".join(parts)


def unpack_entries(buf, offset, dim, count):
    out = []
    for _ in range(count):
        if offset + 4 > len(buf):
            raise TruncatedFile("entry header cut short", offset)
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        if offset + n + 4 * dim > len(buf):
            raise TruncatedFile("entry body cut short", offset)
        try:
            item_id = buf[offset:offset + n].decode("utf-8")
        except UnicodeDecodeError:
            raise TruncatedFile("id is not valid UTF-8", offset) from None
        offset += n
        values = np.frombuffer(buf, dtype="<f4", count=dim, offset=offset).astype(np.float32)
        offset += 4 * dim
        out.append(EmbeddingVector(item_id, values))
    return out, offset


def write_embedding_file(vectors, path, dim=None):
    """Write ``vectors`` sorted by id; returns the entry count.

    ``dim`` only matters for an empty list, where it cannot be inferred.
    """
    vectors = list(vectors)
    _check_batch(vectors)
    if vectors:
        if dim is not None and dim != vectors[0].dim:
            raise DimMismatch(f"declared dim {dim} but vectors have {vectors[0].dim}")
        dim = vectors[0].dim
    elif dim is None:
        raise DimMismatch("dim is required for an empty vector list")
    data = _HEADER.pack(EMBED_MAGIC, EMBED_VERSION, dim, len(vectors)) + pack_entries(vectors)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(vectors)


def read_embedding_file(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(buf) < 4 or buf[:4] != EMBED_MAGIC:
        raise BadMagic(f"{path}: not an embedding store")
    if len(buf) < _HEADER.size:
        raise TruncatedFile("header cut short", len(buf))
    _, version, dim, count = _HEADER.unpack_from(buf, 0)
    if version != EMBED_VERSION:
        raise UnsupportedVersion(f"embedding store version {version}")
    vectors, end = unpack_entries(buf, _HEADER.size, dim, count)
    if end != len(buf):
        raise InputError(f"{len(buf) - end} trailing bytes after {count} entries")
    return vectors


class RemoteEmbeddingProvider:
    """Client for an embedding service speaking ``POST /embed``.

    Request ``{"id", "kind": "sketch"|"diagram", "payload"}``; response
    ``{"id", "dim", "values"}``.  Results are cached per (kind, id) so repeated
    queries are bit-identical even if the service is not.
    """

    def __init__(self, endpoint, timeout_ms=10000, retries=2, api_key=None, backoff_s=0.2):
        self.endpoint = endpoint.rstrip("/")
        self.timeout_ms = timeout_ms
        self.retries = retries
        self.api_key = api_key
        self.backoff_s = backoff_s
        self.name = f"remote:{self.endpoint}"
        self.dim = None
        self._cache = {}

    def _post(self, body):
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(f"{self.endpoint}/embed", data=data, headers=headers,
                                         method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last = exc
                logger.warning("embed request %s failed (attempt %d): %s",
                               body["id"], attempt + 1, exc)
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (2 ** attempt))
        raise IoFailure(f"embedding service unreachable: {last}")

    def embed(self, item_id, kind, payload):
        if kind not in ("sketch", "diagram"):
            raise ValueError("kind must be 'sketch' or 'diagram'")
        key = (kind, item_id)
        if key in self._cache:
            return self._cache[key]
        if hasattr(payload, "nodes"):
            payload = graph_to_dict(payload)
        resp = self._post({"id": item_id, "kind": kind, "payload": payload})
        values = resp.get("values") if isinstance(resp, dict) else None
        if not isinstance(values, list) or resp.get("dim") != len(values):
            raise InputError(f"malformed embedding response for {item_id!r}")
        vec = EmbeddingVector(item_id, np.asarray(values, dtype=np.float32))
        if self.dim is None:
            self.dim = vec.dim
        elif vec.dim != self.dim:
            raise DimMismatch(f"service returned dim {vec.dim}, expected {self.dim}")
        self._cache[key] = vec
        return vec


def endpoint_from_env(flag_value=None, var="DRAG_EMBED_ENDPOINT"):
    return flag_value or os.environ.get(var)
