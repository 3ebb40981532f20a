"""Contrastive sketch-to-diagram alignment.

A single linear projection head is shared by the sketch and diagram sides
and trained on frozen base embeddings with an InfoNCE objective over cosine
similarities.  Gradients are analytic; the training loop is plain gradient
descent with gradient accumulation, linear warmup and cosine decay, and is
byte-deterministic for a given seed.

Head checkpoint layout (little-endian)::

    b"DRPH" | version u32 = 1 | in_dim u32 | out_dim u32
    | out_dim x in_dim float32 (row-major) | out_dim float32 bias
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .degradation import VARIANT_NAMES
from .exceptions import (
    BadMagic, DimMismatch, EmptyNegatives, InputError, InsufficientData, IoFailure,
    TruncatedFile, UnsupportedVersion, ZeroVector,
)
from .hashing import SplitMix64, fnv1a_64

HEAD_MAGIC = b"DRPH"
HEAD_VERSION = 1
_HEAD_HEADER = struct.Struct("<4sIII")


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimMismatch(f"dims {u.shape[0]} and {v.shape[0]} differ")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector()
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass
class ProjectionHead:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: Optional[np.ndarray] = None  # (out_dim,)

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        if self.bias is not None:
            self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
            if self.bias.shape[0] != self.out_dim:
                raise DimMismatch("bias length must equal out_dim")
        if not np.all(np.isfinite(self.weights)) or (
                self.bias is not None and not np.all(np.isfinite(self.bias))):
            raise InputError("projection head has non-finite entries")

    @classmethod
    def identity(cls, dim, bias=True):
        return cls(np.eye(dim), np.zeros(dim) if bias else None)

    @property
    def in_dim(self):
        return self.weights.shape[1]

    @property
    def out_dim(self):
        return self.weights.shape[0]

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.in_dim:
            raise DimMismatch(f"input dim {X.shape[-1]} != head in_dim {self.in_dim}")
        Z = X @ self.weights.T
        if self.bias is not None:
            Z = Z + self.bias
        return Z

    def copy(self):
        return ProjectionHead(self.weights.copy(), None if self.bias is None else self.bias.copy())

    def to_bytes(self):
        bias = self.bias if self.bias is not None else np.zeros(self.out_dim)
        return (_HEAD_HEADER.pack(HEAD_MAGIC, HEAD_VERSION, self.in_dim, self.out_dim)
                + self.weights.astype("<f4").tobytes(order="C")
                + bias.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, buf):
        if len(buf) < 4 or buf[:4] != HEAD_MAGIC:
            raise BadMagic("not a projection head checkpoint")
        if len(buf) < _HEAD_HEADER.size:
            raise TruncatedFile("header cut short", len(buf))
        _, version, in_dim, out_dim = _HEAD_HEADER.unpack_from(buf, 0)
        if version != HEAD_VERSION:
            raise UnsupportedVersion(f"checkpoint version {version}")
        need = _HEAD_HEADER.size + 4 * (in_dim * out_dim + out_dim)
        if len(buf) < need:
            raise TruncatedFile("weights cut short", len(buf))
        w = np.frombuffer(buf, "<f4", in_dim * out_dim, _HEAD_HEADER.size).reshape(out_dim, in_dim)
        b = np.frombuffer(buf, "<f4", out_dim, _HEAD_HEADER.size + 4 * in_dim * out_dim)
        return cls(w.astype(np.float64), b.astype(np.float64))

    def fingerprint(self):
        return fnv1a_64(self.to_bytes())


def save_head(head, path):
    data = head.to_bytes()
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return len(data)


def load_head(path):
    try:
        with open(path, "rb") as fh:
            return ProjectionHead.from_bytes(fh.read())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


@dataclass
class Query:
    sketch: np.ndarray
    positive: str
    negatives: list = field(default_factory=list)  # explicit negatives, at most a few


@dataclass
class TripletBatch:
    queries: list  # of Query
    diagrams: dict  # diagram id -> base vector

    def __post_init__(self):
        for i, q in enumerate(self.queries):
            for d in [q.positive, *q.negatives]:
                if d not in self.diagrams:
                    raise InputError(f"query {i}: unknown diagram id {d!r}")
            if q.positive in q.negatives:
                raise InputError(f"query {i}: positive {q.positive!r} listed as negative")


@dataclass
class TrainConfig:
    temperature: float = 0.05
    epochs: int = 50
    peak_lr: float = 1e-5
    warmup_fraction: float = 0.05
    accumulation_steps: int = 3
    targets_per_micro_batch: int = 20
    explicit_negatives: int = 2
    in_batch_negatives: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.accumulation_steps < 1:
            raise ValueError("accumulation_steps must be >= 1")
        if self.targets_per_micro_batch < 1 or self.epochs < 0 or self.explicit_negatives < 0:
            raise ValueError("invalid batch/epoch settings")


def negative_sets(batch, in_batch_negatives=True):
    """Per-query sorted negative ids: explicit ones plus other queries' positives."""
    positives = {q.positive for q in batch.queries}
    out = []
    for i, q in enumerate(batch.queries):
        neg = set(q.negatives)
        if in_batch_negatives:
            neg |= positives
        neg.discard(q.positive)
        if not neg:
            raise EmptyNegatives(f"query {i} (positive {q.positive!r}) has no negatives")
        out.append(sorted(neg))
    return out


def _normalized(Z, what):
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVector(what)
    return Z / norms[:, None], norms


def info_nce_loss_and_grad(batch, head, temperature, in_batch_negatives=True):
    """Mean InfoNCE loss over the batch and its exact gradient w.r.t. the head.

    Each query's logits are cosine(head(s), head(d)) / temperature over its
    positive and its negatives; the loss is the negative log-softmax at the
    positive.  Returns ``(loss, grad_weights, grad_bias)`` where
    ``grad_bias`` is None for a bias-free head.
    """
    if not batch.queries:
        raise InputError("empty batch")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    negs = negative_sets(batch, in_batch_negatives)
    ids = sorted({q.positive for q in batch.queries} | {d for n in negs for d in n})
    col = {d: j for j, d in enumerate(ids)}
    Xs = np.stack([np.asarray(q.sketch, dtype=np.float64) for q in batch.queries])
    Xd = np.stack([np.asarray(batch.diagrams[d], dtype=np.float64) for d in ids])
    Q, D = len(batch.queries), len(ids)

    A, na = _normalized(head.apply(Xs), "projected sketch")
    B, nb = _normalized(head.apply(Xd), "projected diagram")
    C = A @ B.T

    mask = np.zeros((Q, D), dtype=bool)
    pos = np.empty(Q, dtype=np.int64)
    for i, q in enumerate(batch.queries):
        pos[i] = col[q.positive]
        mask[i, pos[i]] = True
        mask[i, [col[d] for d in negs[i]]] = True

    logits = np.where(mask, C / temperature, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(logits - m), 0.0)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z)).reshape(-1)
    rows = np.arange(Q)
    losses = lse - logits[rows, pos]
    loss = math.fsum(losses) / Q

    # dL/dC for the mean loss
    G = e / z
    G[rows, pos] -= 1.0
    G /= temperature * Q
    # d cos(a, b) / da = (b_hat - cos * a_hat) / |a|
    GC = G * C
    dA = (G @ B - GC.sum(axis=1, keepdims=True) * A) / na[:, None]
    dB = (G.T @ A - GC.sum(axis=0)[:, None] * B) / nb[:, None]
    grad_w = dA.T @ Xs + dB.T @ Xd
    grad_b = dA.sum(axis=0) + dB.sum(axis=0) if head.bias is not None else None
    return loss, grad_w, grad_b


def learning_rate_at(step, total_steps, cfg):
    """Linear warmup to ``peak_lr`` over ceil(warmup_fraction * T) steps, then cosine decay to 0."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError("need 0 <= step <= total_steps and total_steps >= 1")
    w = math.ceil(cfg.warmup_fraction * total_steps)
    if step < w:
        return cfg.peak_lr * step / w
    if step >= total_steps:
        return 0.0
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * (step - w) / (total_steps - w)))


@dataclass
class AlignmentDataset:
    """Sketch vectors grouped by source diagram plus the diagram vectors.

    ``sketches[d]`` lists the variant vectors of diagram ``d`` in variant
    order; every key of ``sketches`` is a training target.
    """

    sketches: dict
    diagrams: dict

    @property
    def pool(self):
        return sorted(self.sketches)

    def __post_init__(self):
        for d in self.sketches:
            if d not in self.diagrams:
                raise InputError(f"no diagram vector for target {d!r}")

    @classmethod
    def from_records(cls, variant_records, sketch_vectors, diagram_vectors):
        """Group variant embeddings by source diagram.

        ``sketch_vectors`` maps ``"{diagram}.{variant}"`` ids to vectors.
        """
        sketches = {}
        for rec in sorted(variant_records,
                          key=lambda r: (r.source_diagram_id, VARIANT_NAMES.index(r.variant))):
            key = f"{rec.source_diagram_id}.{rec.variant}"
            sketches.setdefault(rec.source_diagram_id, []).append(sketch_vectors[key])
        return cls(sketches, dict(diagram_vectors))


def sample_micro_batch(dataset, seed, cfg):
    """Draw targets without replacement; each contributes all its variants as queries."""
    pool = dataset.pool
    if len(pool) < cfg.targets_per_micro_batch:
        raise InsufficientData(
            f"pool has {len(pool)} diagrams, need {cfg.targets_per_micro_batch}")
    rng = SplitMix64(seed)
    targets = rng.shuffle(list(pool))[: cfg.targets_per_micro_batch]
    queries = []
    for t in targets:
        others = [d for d in pool if d != t]
        for vec in dataset.sketches[t]:
            queries.append(Query(vec, t, rng.sample(others, cfg.explicit_negatives)))
    used = {q.positive for q in queries} | {d for q in queries for d in q.negatives}
    return TripletBatch(queries, {d: dataset.diagrams[d] for d in sorted(used)})


def micro_batch_seed(seed, index):
    return fnv1a_64(f"{int(seed)}|micro_batch|{index}")


@dataclass
class TrainResult:
    head: ProjectionHead
    log: list  # dicts with step, micro_batch, lr, loss

    def log_jsonl(self):
        return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in self.log)


def train_projection(dataset, cfg, head=None):
    """Train the shared projection head with accumulated plain gradient descent.

    ``epochs * (pool_size // targets_per_micro_batch)`` micro-batches are
    drawn; gradients of ``accumulation_steps`` consecutive micro-batches are
    averaged into one update at ``learning_rate_at(step)``.
    """
    if head is None:
        in_dim = len(next(iter(dataset.diagrams.values())))
        head = ProjectionHead.identity(in_dim)
    head = head.copy()
    per_epoch = max(1, len(dataset.pool) // cfg.targets_per_micro_batch)
    n_micro = cfg.epochs * per_epoch
    n_steps = max(1, math.ceil(n_micro / cfg.accumulation_steps))
    log = []
    mb = 0
    for step in range(n_steps):
        lr = learning_rate_at(step, n_steps, cfg)
        gw = np.zeros_like(head.weights)
        gb = None if head.bias is None else np.zeros_like(head.bias)
        k = 0
        while k < cfg.accumulation_steps and mb < n_micro:
            batch = sample_micro_batch(dataset, micro_batch_seed(cfg.seed, mb), cfg)
            loss, w, b = info_nce_loss_and_grad(batch, head, cfg.temperature,
                                                cfg.in_batch_negatives)
            gw += w
            if gb is not None:
                gb += b
            log.append({"step": step, "micro_batch": mb, "lr": lr, "loss": loss})
            mb += 1
            k += 1
        if k == 0:
            break
        head.weights -= lr * (gw / k)
        if gb is not None:
            head.bias -= lr * (gb / k)
    return TrainResult(head, log)


def mean_batch_loss(dataset, head, cfg, n_batches=5, seed_offset=10**6):
    """Average InfoNCE over a few fixed micro-batches (for before/after comparisons)."""
    losses = []
    for i in range(n_batches):
        batch = sample_micro_batch(dataset, micro_batch_seed(cfg.seed, seed_offset + i), cfg)
        losses.append(info_nce_loss_and_grad(batch, head, cfg.temperature,
                                             cfg.in_batch_negatives)[0])
    return math.fsum(losses) / len(losses)


class ContrastiveProjection(BaseEstimator, TransformerMixin):
    """Estimator wrapper around :func:`train_projection`.

    ``fit`` takes an :class:`AlignmentDataset`; ``transform`` maps base
    vectors through the learned head.
    """

    def __init__(self, temperature=0.05, epochs=50, peak_lr=1e-5, warmup_fraction=0.05,
                 accumulation_steps=3, targets_per_micro_batch=20, explicit_negatives=2,
                 in_batch_negatives=True, seed=0):
        self.temperature = temperature
        self.epochs = epochs
        self.peak_lr = peak_lr
        self.warmup_fraction = warmup_fraction
        self.accumulation_steps = accumulation_steps
        self.targets_per_micro_batch = targets_per_micro_batch
        self.explicit_negatives = explicit_negatives
        self.in_batch_negatives = in_batch_negatives
        self.seed = seed

    def config(self):
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None):
        result = train_projection(X, self.config())
        self.head_ = result.head
        self.log_ = result.log
        return self

    def transform(self, X):
        check_is_fitted(self, "head_")
        return self.head_.apply(X)


def config_dict(cfg):
    return asdict(cfg)
