"""Synthetic end-to-end retrieval experiment: corpus -> variants -> embeddings -> head -> recall."""

from __future__ import annotations

import math
import time
from dataclasses import replace

from .align import AlignmentDataset, ProjectionHead, TrainConfig, config_dict, mean_batch_loss, train_projection
from .degradation import VARIANT_NAMES
from .embed import EmbeddingVector, embed_feature_hash
from .evaluation import compute_retrieval_metrics
from .hashing import SplitMix64, fnv1a_64
from .index import build_index, query_top_k
from .synthetic import random_corpus
from .variants import SeedSpec, generate_variant_set, prepare_graph


def split_ids(ids, holdout_fraction, seed):
    """Seeded (train, held-out) partition of diagram ids, each sorted."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie in (0, 1)")
    order = SplitMix64(fnv1a_64(f"{seed}|split")).shuffle(sorted(ids))
    n_hold = max(1, round(holdout_fraction * len(order)))
    return sorted(order[n_hold:]), sorted(order[:n_hold])


def evaluate_head(index_vectors, queries, head, k=5):
    """Recall/MRR of variant queries against an index built with ``head`` (None = raw)."""
    idx = build_index(index_vectors, head)
    rankings, gt = {}, {}
    for qid, source, vec in queries:
        res = query_top_k(idx, vec, k=k, head=head)
        rankings[qid] = [i for i, _ in res.results]
        gt[qid] = source
    return compute_retrieval_metrics(rankings, gt)


def run_e2e(n=100, dim=256, seed=7, holdout_fraction=0.2, cfg=None, min_nodes=6, max_nodes=30):
    """Train a projection head on the training diagrams' variants and compare held-out recall.

    Every diagram of the corpus is indexed; queries are the five variants of
    each held-out diagram, so the head never sees the query sketches nor
    their positives as training targets.
    """
    t0 = time.perf_counter()
    cfg = cfg or TrainConfig()
    cfg = replace(cfg, seed=fnv1a_64(f"{seed}|train"))
    corpus = random_corpus(n, seed, min_nodes=min_nodes, max_nodes=max_nodes)
    spec = SeedSpec(seed)
    diagram_vecs, sketch_vecs, records = {}, {}, []
    for g in corpus:
        prepared = prepare_graph(g)
        diagram_vecs[g.diagram_id] = embed_feature_hash(prepared, dim).values
        for rec in generate_variant_set(g, spec):
            records.append(rec)
            key = f"{rec.source_diagram_id}.{rec.variant}"
            sketch_vecs[key] = embed_feature_hash(rec.graph, dim, key).values
    train_ids, held_ids = split_ids(diagram_vecs, holdout_fraction, seed)
    train_set = set(train_ids)
    dataset = AlignmentDataset.from_records(
        [r for r in records if r.source_diagram_id in train_set], sketch_vecs,
        {d: diagram_vecs[d] for d in train_ids})
    t_data = time.perf_counter()

    init = ProjectionHead.identity(dim)
    loss_before = mean_batch_loss(dataset, init, cfg)
    result = train_projection(dataset, cfg, init)
    loss_after = mean_batch_loss(dataset, result.head, cfg)
    t_train = time.perf_counter()

    index_vectors = [EmbeddingVector(d, v) for d, v in sorted(diagram_vecs.items())]
    queries = [(f"{d}.{v}", d, EmbeddingVector(f"{d}.{v}", sketch_vecs[f"{d}.{v}"]))
               for d in held_ids for v in VARIANT_NAMES]
    untrained = evaluate_head(index_vectors, queries, None)
    trained = evaluate_head(index_vectors, queries, result.head)
    t_end = time.perf_counter()

    steps = sorted({r["step"] for r in result.log})
    return {
        "n_diagrams": n, "dim": dim, "seed": seed,
        "n_train": len(train_ids), "n_heldout": len(held_ids), "n_queries": len(queries),
        "train_config": config_dict(cfg),
        "optimizer_steps": len(steps), "micro_batches": len(result.log),
        "train_loss_before": loss_before, "train_loss_after": loss_after,
        "untrained": untrained.to_dict(include_ranks=False),
        "trained": trained.to_dict(include_ranks=False),
        "trained_ge_untrained": trained.recall_at_1 >= untrained.recall_at_1,
        "head_delta_max": float(abs(result.head.weights - init.weights).max()),
        "timing_s": {"data": t_data - t0, "train": t_train - t_data, "eval": t_end - t_train,
                     "total": t_end - t0},
    }, result


def recall_gap(report):
    return report["trained"]["Recall@1"] - report["untrained"]["Recall@1"]


def is_finite_report(report):
    return all(math.isfinite(report[k]) for k in ("train_loss_before", "train_loss_after"))
