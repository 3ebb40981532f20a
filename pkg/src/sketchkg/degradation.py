"""Node, edge and text loss between an original graph and one of its variants."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

from .exceptions import PreconditionViolated

VARIANT_NAMES = ("light_skeleton", "medium_missing", "coarse_layout", "text_reduced", "layout_jitter")


@dataclass(frozen=True)
class LossRecord:
    node_loss: float = 0.0
    edge_loss: float = 0.0
    text_loss: float = 0.0

    def as_dict(self):
        return asdict(self)


@dataclass
class LossSummary:
    means: dict  # variant name -> LossRecord, only for count > 0
    counts: dict  # variant name -> int

    def as_dict(self):
        return {
            v: {**(self.means[v].as_dict() if v in self.means else
                   {"node_loss": None, "edge_loss": None, "text_loss": None}),
                "count": self.counts.get(v, 0)}
            for v in sorted(self.counts, key=_variant_order)
        }

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["variant", "node_loss", "edge_loss", "text_loss", "count"])
        for v, row in self.as_dict().items():
            writer.writerow([v, row["node_loss"], row["edge_loss"], row["text_loss"], row["count"]])
        return buf.getvalue()


def _variant_order(name):
    return (VARIANT_NAMES.index(name) if name in VARIANT_NAMES else len(VARIANT_NAMES), name)


def _tokens(text):
    return (text or "").split()


def _positional_hits(orig, var):
    return sum(1 for a, b in zip(orig, var) if a == b)


def _match_texts(orig_texts, var_texts):
    """Greedy one-to-one pairing of variant free texts with originals of the same kind."""
    hits = 0
    used = set()
    for vt in var_texts:
        vtok = _tokens(vt.content)
        best, best_i = -1, None
        for i, ot in enumerate(orig_texts):
            if i in used or ot.kind != vt.kind:
                continue
            h = _positional_hits(_tokens(ot.content), vtok)
            if h > best:
                best, best_i = h, i
        if best_i is not None:
            used.add(best_i)
            hits += best
    return hits


def compute_variant_loss(original, variant):
    """Fraction of nodes, edges and label tokens of ``original`` missing from ``variant``.

    An edge counts as retained only if its (source, target, path_type) key
    exists in the original, so bridge edges never offset a loss.  A label
    token is retained when the same token sits at the same position of the
    corresponding element (node name by id, group label by id, free text by
    kind, main-structure description).
    """
    orig_nodes = {n.id: n for n in original.nodes}
    var_nodes = {n.id: n for n in variant.nodes}
    extra = sorted(set(var_nodes) - set(orig_nodes))
    if extra:
        raise PreconditionViolated(f"variant has node ids absent from the original: {extra}")

    # (total - kept) / total rather than 1 - kept / total: exact for integer counts
    node_loss = (len(orig_nodes) - len(var_nodes)) / len(orig_nodes) if orig_nodes else 0.0

    orig_keys = {e.key for e in original.edges}
    if orig_keys:
        kept = len({e.key for e in variant.edges} & orig_keys)
        edge_loss = (len(orig_keys) - kept) / len(orig_keys)
    else:
        edge_loss = 0.0

    total = 0
    kept_tokens = 0
    for nid, node in orig_nodes.items():
        tok = _tokens(node.name)
        total += len(tok)
        if nid in var_nodes:
            kept_tokens += _positional_hits(tok, _tokens(var_nodes[nid].name))
    var_groups = {g.group_id: g for g in variant.groups}
    for g in original.groups:
        tok = _tokens(g.label)
        total += len(tok)
        if g.group_id in var_groups:
            kept_tokens += _positional_hits(tok, _tokens(var_groups[g.group_id].label))
    total += sum(len(_tokens(t.content)) for t in original.free_texts)
    kept_tokens += _match_texts(original.free_texts, variant.free_texts)
    tok = _tokens(original.layout.main_structure)
    total += len(tok)
    kept_tokens += _positional_hits(tok, _tokens(variant.layout.main_structure))
    text_loss = (total - kept_tokens) / total if total else 0.0

    return LossRecord(_clamp(node_loss), _clamp(edge_loss), _clamp(text_loss))


def _clamp(x):
    return min(1.0, max(0.0, x))


def aggregate_variant_losses(records):
    """Mean loss per variant kind.

    ``math.fsum`` makes the means independent of record order, bit for bit.
    """
    buckets = {}
    for rec in records:
        buckets.setdefault(rec.variant, []).append(rec.loss)
    means, counts = {}, {}
    for v, losses in buckets.items():
        n = len(losses)
        counts[v] = n
        means[v] = LossRecord(
            math.fsum(x.node_loss for x in losses) / n,
            math.fsum(x.edge_loss for x in losses) / n,
            math.fsum(x.text_loss for x in losses) / n,
        )
    for v in VARIANT_NAMES:
        counts.setdefault(v, 0)
    return LossSummary(means, counts)
