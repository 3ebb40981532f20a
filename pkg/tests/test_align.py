import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchkg.align import (
    AlignmentDataset, ContrastiveProjection, ProjectionHead, Query, TrainConfig, TripletBatch,
    cosine_similarity, info_nce_loss_and_grad, learning_rate_at, load_head, mean_batch_loss,
    sample_micro_batch, save_head, train_projection,
)
from sketchkg.exceptions import (
    BadMagic, DimMismatch, EmptyNegatives, InputError, InsufficientData, TruncatedFile, ZeroVector,
)
from sketchkg.index import build_index, query_top_k
from sketchkg.embed import EmbeddingVector


def _dataset(n_diagrams, dim=8, seed=0, variants=5):
    rng = np.random.default_rng(seed)
    diagrams = {f"d{i:03d}": rng.normal(size=dim) for i in range(n_diagrams)}
    sketches = {d: [v + 0.3 * rng.normal(size=dim) for _ in range(variants)]
                for d, v in diagrams.items()}
    return AlignmentDataset(sketches, diagrams)


def _random_batch(rng, dim, n_queries, n_diagrams, n_neg):
    diagrams = {f"d{i}": rng.normal(size=dim) for i in range(n_diagrams)}
    ids = sorted(diagrams)
    queries = []
    for _ in range(n_queries):
        pos = ids[rng.integers(n_diagrams)]
        others = [d for d in ids if d != pos]
        negs = list(rng.choice(others, size=min(n_neg, len(others)), replace=False))
        queries.append(Query(rng.normal(size=dim), pos, negs))
    return TripletBatch(queries, diagrams)


# ------------------------------------------------------------------ cosine

def test_cosine_examples():
    assert cosine_similarity([1, 2, 2], [2, 2, 1]) == pytest.approx(8 / 9, abs=1e-12)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    v = np.random.default_rng(1).normal(size=17)
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ZeroVector):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(DimMismatch):
        cosine_similarity([1, 0], [1, 0, 0])


# ------------------------------------------------------------------ loss

def test_one_negative_equal_similarity_is_ln2():
    batch = TripletBatch([Query([1.0, 0.0], "p", ["n"])],
                         {"p": [1.0, 1.0], "n": [1.0, -1.0]})
    loss, _, _ = info_nce_loss_and_grad(batch, ProjectionHead.identity(2), 0.05,
                                        in_batch_negatives=False)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_uniform_softmax_is_ln_k_plus_one(k):
    # every diagram is orthogonal to the query, so all logits are equal
    dim = k + 2
    diagrams = {f"d{i}": np.eye(dim)[i + 1] for i in range(k + 1)}
    batch = TripletBatch([Query(np.eye(dim)[0], "d0", [f"d{i}" for i in range(1, k + 1)])],
                         diagrams)
    loss, _, _ = info_nce_loss_and_grad(batch, ProjectionHead.identity(dim, bias=False), 0.05,
                                        in_batch_negatives=False)
    assert loss == pytest.approx(math.log(k + 1), abs=1e-12)


def test_empty_negatives():
    batch = TripletBatch([Query([1.0, 0.0], "p", [])], {"p": [1.0, 1.0]})
    with pytest.raises(EmptyNegatives):
        info_nce_loss_and_grad(batch, ProjectionHead.identity(2), 0.05, in_batch_negatives=False)
    # a single-query batch has no other positives to borrow either
    with pytest.raises(EmptyNegatives):
        info_nce_loss_and_grad(batch, ProjectionHead.identity(2), 0.05, in_batch_negatives=True)


def test_in_batch_negatives_add_other_positives():
    diagrams = {"a": [1.0, 0.0, 0.0], "b": [0.0, 1.0, 0.0]}
    batch = TripletBatch([Query([0.0, 0.0, 1.0], "a", []), Query([0.0, 0.0, 1.0], "b", [])],
                         diagrams)
    loss, _, _ = info_nce_loss_and_grad(batch, ProjectionHead.identity(3), 0.05)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_batch_validation():
    with pytest.raises(InputError):
        TripletBatch([Query([1.0], "p", ["x"])], {"p": [1.0]})
    with pytest.raises(InputError):
        TripletBatch([Query([1.0], "p", ["p"])], {"p": [1.0]})


def _numeric_grad(batch, head, tau, in_batch, h=1e-4):
    gw = np.zeros_like(head.weights)
    for idx in np.ndindex(*head.weights.shape):
        plus, minus = head.copy(), head.copy()
        plus.weights[idx] += h
        minus.weights[idx] -= h
        gw[idx] = (info_nce_loss_and_grad(batch, plus, tau, in_batch)[0]
                   - info_nce_loss_and_grad(batch, minus, tau, in_batch)[0]) / (2 * h)
    gb = np.zeros_like(head.bias)
    for j in range(len(head.bias)):
        plus, minus = head.copy(), head.copy()
        plus.bias[j] += h
        minus.bias[j] -= h
        gb[j] = (info_nce_loss_and_grad(batch, plus, tau, in_batch)[0]
                 - info_nce_loss_and_grad(batch, minus, tau, in_batch)[0]) / (2 * h)
    return gw, gb


def _rel_err(a, b):
    # the floor only guards exact zeros
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def test_gradient_matches_finite_differences_8dim():
    rng = np.random.default_rng(2024)
    batch = _random_batch(rng, 8, 6, 7, 2)
    head = ProjectionHead(np.eye(8) + 0.1 * rng.normal(size=(8, 8)), 0.05 * rng.normal(size=8))
    loss, gw, gb = info_nce_loss_and_grad(batch, head, 0.5)
    nw, nb = _numeric_grad(batch, head, 0.5, True)
    assert _rel_err(gw, nw) <= 1e-4 and _rel_err(gb, nb) <= 1e-4


@given(st.integers(0, 2**32 - 1), st.integers(2, 16), st.sampled_from([0.1, 0.5, 1.0]),
       st.booleans())
def test_gradient_property(seed, dim, tau, in_batch):
    rng = np.random.default_rng(seed)
    batch = _random_batch(rng, dim, int(rng.integers(2, 5)), int(rng.integers(3, 6)), 2)
    head = ProjectionHead(np.eye(dim) + 0.2 * rng.normal(size=(dim, dim)), 0.1 * rng.normal(size=dim))
    _, gw, gb = info_nce_loss_and_grad(batch, head, tau, in_batch)
    nw, nb = _numeric_grad(batch, head, tau, in_batch)
    assert _rel_err(gw, nw) <= 1e-4 and _rel_err(gb, nb) <= 1e-4


def test_loss_positive_and_decreasing_in_margin():
    losses = []
    for margin in np.linspace(0.0, 1.5, 7):
        q = np.array([1.0, 0.0])
        pos = np.array([1.0, 0.0])
        neg = np.array([math.cos(margin), math.sin(margin)])
        batch = TripletBatch([Query(q, "p", ["n"])], {"p": pos, "n": neg})
        losses.append(info_nce_loss_and_grad(batch, ProjectionHead.identity(2, bias=False), 0.05,
                                             False)[0])
    assert all(x > 0 for x in losses)
    assert all(a > b for a, b in zip(losses, losses[1:]))


# ------------------------------------------------------------------ schedule

def test_schedule_examples():
    cfg = TrainConfig()
    T = 100
    w = math.ceil(0.05 * T)
    assert learning_rate_at(0, T, cfg) == 0.0
    assert learning_rate_at(w, T, cfg) == 1e-5
    assert abs(learning_rate_at(T, T, cfg)) <= 1e-12


@given(st.integers(1, 400), st.floats(0.0, 0.9))
def test_schedule_shape(T, frac):
    cfg = TrainConfig(warmup_fraction=frac)
    w = math.ceil(frac * T)
    lrs = [learning_rate_at(s, T, cfg) for s in range(T + 1)]
    # when the warmup would not finish before T, the endpoint lr(T) = 0 takes precedence
    up = min(w, T - 1)
    assert all(a <= b for a, b in zip(lrs[:up + 1], lrs[1:up + 1]))
    assert all(a >= b for a, b in zip(lrs[w:], lrs[w + 1:]))
    assert lrs[-1] == 0.0


def test_config_validation():
    for bad in ({"temperature": 0}, {"warmup_fraction": 1.0}, {"accumulation_steps": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


# ------------------------------------------------------------------ sampler

def test_default_micro_batch_has_100_queries():
    batch = sample_micro_batch(_dataset(30), 5, TrainConfig())
    assert len(batch.queries) == 100
    assert len({q.positive for q in batch.queries}) == 20
    assert all(len(q.negatives) == 2 for q in batch.queries)


def test_sampler_deterministic():
    ds = _dataset(25)
    a = sample_micro_batch(ds, 11, TrainConfig())
    b = sample_micro_batch(ds, 11, TrainConfig())
    assert [(q.positive, q.negatives) for q in a.queries] == [(q.positive, q.negatives) for q in b.queries]
    c = sample_micro_batch(ds, 12, TrainConfig())
    assert [q.positive for q in a.queries] != [q.positive for q in c.queries]


@given(st.integers(0, 2**64 - 1))
def test_negatives_exclude_positive_on_exact_pool(seed):
    batch = sample_micro_batch(_dataset(20), seed, TrainConfig())
    for q in batch.queries:
        assert q.positive not in q.negatives and len(set(q.negatives)) == 2


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        sample_micro_batch(_dataset(19), 0, TrainConfig())


# ------------------------------------------------------------------ training

def test_zero_lr_returns_initial_head():
    ds = _dataset(20)
    cfg = TrainConfig(epochs=3, peak_lr=0.0)
    init = ProjectionHead.identity(8)
    out = train_projection(ds, cfg, init).head
    assert np.array_equal(out.weights, init.weights) and np.array_equal(out.bias, init.bias)


def test_training_descends_on_small_set():
    ds = _dataset(20, seed=3)
    cfg = TrainConfig(epochs=50)
    init = ProjectionHead.identity(8)
    before = mean_batch_loss(ds, init, cfg)
    res = train_projection(ds, cfg, init)
    assert mean_batch_loss(ds, res.head, cfg) <= before
    # with a larger step the descent is visible well beyond rounding
    fast = TrainConfig(epochs=50, peak_lr=0.05)
    assert mean_batch_loss(ds, train_projection(ds, fast, init).head, fast) < before - 1e-3


def test_training_log_shape_and_determinism():
    ds = _dataset(40)
    cfg = TrainConfig(epochs=4, seed=9)
    a = train_projection(ds, cfg)
    b = train_projection(ds, cfg)
    assert a.log_jsonl() == b.log_jsonl()
    assert len(a.log) == 4 * 2  # epochs * (40 // 20) micro-batches
    assert sorted({r["step"] for r in a.log}) == [0, 1, 2]
    assert set(a.log[0]) == {"step", "micro_batch", "lr", "loss"}
    assert a.head.to_bytes() == b.head.to_bytes()


def test_estimator_wrapper():
    ds = _dataset(20)
    est = ContrastiveProjection(epochs=2, peak_lr=0.01).fit(ds)
    X = np.random.default_rng(0).normal(size=(3, 8))
    np.testing.assert_allclose(est.transform(X), est.head_.apply(X))


def test_scaling_diagram_vectors_keeps_rankings():
    rng = np.random.default_rng(5)
    vecs = [EmbeddingVector(f"d{i}", rng.normal(size=12)) for i in range(30)]
    scaled = [EmbeddingVector(v.id, v.values * np.float32(4.0)) for v in vecs]
    q = EmbeddingVector("q", rng.normal(size=12))
    a = query_top_k(build_index(vecs), q, k=30)
    b = query_top_k(build_index(scaled), q, k=30)
    assert [i for i, _ in a.results] == [i for i, _ in b.results]


# ------------------------------------------------------------------ checkpoint

def test_head_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    head = ProjectionHead(rng.normal(size=(4, 6)).astype(np.float32), rng.normal(size=4).astype(np.float32))
    p = tmp_path / "h.drph"
    n = save_head(head, p)
    assert n == 16 + 4 * (24 + 4)
    back = load_head(p)
    assert back.to_bytes() == head.to_bytes() and back.fingerprint() == head.fingerprint()
    raw = p.read_bytes()
    p.write_bytes(b"DRIX" + raw[4:])
    with pytest.raises(BadMagic):
        load_head(p)
    p.write_bytes(raw[:-3])
    with pytest.raises(TruncatedFile):
        load_head(p)
