"""Deterministic sketch variants of a topology graph.

Five variants simulate what an incomplete hand sketch keeps of a diagram:

``light_skeleton``   decorative nodes removed, labels shortened
``medium_missing``   only structural anchors kept, removed runs bridged
``coarse_layout``    a small node budget around the main path
``text_reduced``     light skeleton with almost all text removed
``layout_jitter``    medium_missing with perturbed boxes

Every random draw comes from a SplitMix64 stream seeded by
:func:`~sketchkg.hashing.stable_seed`, so outputs are byte-identical across
runs and platforms.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from sklearn.base import BaseEstimator, TransformerMixin

from .degradation import VARIANT_NAMES, LossRecord, compute_variant_loss
from ._jsonio import loads_strict
from .exceptions import EmptyGraph, IoFailure, MalformedJson, SchemaViolation
from .hashing import SplitMix64, stable_seed
from .kg import (
    BBox, EdgeRecord, FreeText, TopologyGraph, dumps_compact, flow_edges,
    graph_body_to_dict, graph_from_dict, normalize_graph, with_inferred_layout,
)

TEXT_LEVELS = ("medium", "low", "none")
STRUCTURAL_TYPES = ("input", "output", "container", "connector", "branch", "merge")
# fractions as integer percentages so ceilings are exact
COARSE_PATH_PERCENT = 22
COARSE_NODE_PERCENT = 30
COARSE_MAX_NODES = 6
COARSE_MIN_NODES = 3
GROUP_PADDING = 0.01
DEFAULT_JITTER = 0.05


@dataclass(frozen=True)
class TextPolicy:
    level: str = "medium"

    def __post_init__(self):
        if self.level not in TEXT_LEVELS:
            raise ValueError(f"unknown text level {self.level!r}")


@dataclass(frozen=True)
class SeedSpec:
    global_seed: int = 0
    jitter_fraction: float = DEFAULT_JITTER

    def __post_init__(self):
        if not 0 <= int(self.global_seed) < 2 ** 64:
            raise ValueError("global_seed must fit in 64 unsigned bits")
        if not 0.0 <= self.jitter_fraction <= 0.5:
            raise ValueError("jitter_fraction must lie in [0, 0.5]")


@dataclass
class VariantRecord:
    source_diagram_id: str
    variant: str
    seed: int
    graph: TopologyGraph
    loss: LossRecord

    def to_dict(self):
        return {
            "source_diagram_id": self.source_diagram_id,
            "variant": self.variant,
            "seed": self.seed,
            "graph": graph_body_to_dict(self.graph),
            "loss": self.loss.as_dict(),
        }

    def to_json(self):
        return dumps_compact(self.to_dict())

    @classmethod
    def from_dict(cls, obj):
        graph = graph_from_dict({"diagram_id": obj["source_diagram_id"], "graph": obj["graph"]})
        return cls(obj["source_diagram_id"], obj["variant"], int(obj["seed"]), graph,
                   LossRecord(**obj["loss"]))


def truncate_words(text, n):
    return " ".join((text or "").split()[:n])


_KIND_ORDER = {"role_title": 0, "label": 1, "legend": 2, "annotation": 3}


def apply_text_policy(g, policy):
    """Reduce label text according to ``policy``; topology is untouched.

    medium: node names <= 3 words, group labels <= 2 words, a single free
    text kept (first by kind, then content) cut to 2 words.
    low: node and group labels <= 2 words, free text dropped, layout
    description dropped.
    none: all text removed except ``Input``/``Output`` placeholders on
    input/output nodes.
    """
    level = policy.level if isinstance(policy, TextPolicy) else TextPolicy(policy).level
    out = g.copy()
    if level == "medium":
        for n in out.nodes:
            n.name = truncate_words(n.name, 3)
        for gr in out.groups:
            gr.label = truncate_words(gr.label, 2)
        if out.free_texts:
            first = min(out.free_texts,
                        key=lambda t: (_KIND_ORDER.get(t.kind, 4), t.content.encode("utf-8")))
            out.free_texts = [FreeText(first.kind, truncate_words(first.content, 2), first.anchor)]
    elif level == "low":
        for n in out.nodes:
            n.name = truncate_words(n.name, 2)
        for gr in out.groups:
            gr.label = truncate_words(gr.label, 2)
        out.free_texts = []
        out.layout.main_structure = ""
    else:
        for n in out.nodes:
            n.name = {"input": "Input", "output": "Output"}.get(n.node_type, "")
        for gr in out.groups:
            gr.label = ""
        out.free_texts = []
        out.layout.main_structure = ""
    return out


def _restrict(g, keep, extra_edges=()):
    """Subgraph on ``keep`` with edges between survivors, plus ``extra_edges``, normalized."""
    out = g.copy()
    out.nodes = [n for n in out.nodes if n.id in keep]
    out.edges = [e for e in out.edges if e.source in keep and e.target in keep]
    out.edges.extend(extra_edges)
    return normalize_graph(out)


def make_light_skeleton(g):
    keep = {n.id for n in g.nodes if n.importance != "decorative"}
    return apply_text_policy(_restrict(g, keep), TextPolicy("medium"))


def _feedback_endpoints(g):
    return {x for pair in g.layout.feedback_edges for x in pair}


def medium_missing_retained(g):
    lay = g.layout
    keep = set(lay.main_path) | set(lay.branch_points) | set(lay.merge_points)
    keep |= _feedback_endpoints(g)
    keep |= {n.id for n in g.nodes if n.node_type in STRUCTURAL_TYPES}
    if not keep:
        keep = {n.id for n in g.nodes if n.importance == "major"}
    return keep


def bridge_edges(g, keep):
    """One bridge u->w per ordered pair of kept nodes joined only through removed nodes.

    The interior is the shortest such path, ties broken by the smallest id
    sequence (breadth-first search with sorted successors yields exactly
    that).  Pairs already joined by a direct non-containment edge get none.
    """
    succ = {n.id: set() for n in g.nodes}
    for e in flow_edges(g):
        succ[e.source].add(e.target)
    succ = {k: sorted(v) for k, v in succ.items()}
    bridges = []
    for u in sorted(keep):
        parent = {u: None}
        queue = deque([u])
        found = []
        while queue:
            x = queue.popleft()
            for y in succ[x]:
                if y in parent:
                    continue
                parent[y] = x
                if y in keep:
                    if x != u:
                        found.append(y)
                else:
                    queue.append(y)
        for w in sorted(found):
            interior = []
            x = parent[w]
            while x != u:
                interior.append(x)
                x = parent[x]
            interior.reverse()
            bridges.append(EdgeRecord(u, w, "flow", "forward", interior))
    return bridges


def make_medium_missing(g):
    keep = medium_missing_retained(g)
    direct = {(e.source, e.target, e.path_type) for e in g.edges}
    bridges = [b for b in bridge_edges(g, keep) if b.key not in direct]
    out = _restrict(g, keep, bridges)
    out.free_texts = []
    return apply_text_policy(out, TextPolicy("medium"))


def _ceil_percent(percent, n):
    return -(-percent * n // 100)


def coarse_budget(n_nodes):
    """Node budget: min(ceil(0.3 n), 6), raised to min(3, n)."""
    cap = min(_ceil_percent(COARSE_NODE_PERCENT, n_nodes), COARSE_MAX_NODES)
    return max(cap, min(COARSE_MIN_NODES, n_nodes))


def sample_main_path(main_path, seed):
    """Seeded sample of interior main-path nodes, about 22% of the path, at most 6."""
    interior = list(main_path[1:-1])
    if not interior:
        return []
    target = min(_ceil_percent(COARSE_PATH_PERCENT, len(main_path)), COARSE_MAX_NODES)
    order = SplitMix64(seed).shuffle(list(range(len(interior))))
    return [interior[i] for i in sorted(order[:target])]


def _degree(g):
    deg = {n.id: 0 for n in g.nodes}
    for e in g.edges:
        deg[e.source] += 1
        deg[e.target] += 1
    return deg


def make_coarse_layout(g, seed):
    """Strongest simplification: a handful of anchor nodes under a node budget."""
    nodes = g.node_map()
    lay = g.layout
    deg = _degree(g)
    endpoints = {lay.main_path[0], lay.main_path[-1]} if lay.main_path else set()
    sampled = set(sample_main_path(lay.main_path, seed))
    layout_anchors = set(lay.branch_points) | set(lay.merge_points) | _feedback_endpoints(g)
    keep = layout_anchors | endpoints | sampled
    keep |= {i for i, n in nodes.items() if n.node_type in ("input", "output")}
    keep |= {i for i, n in nodes.items() if n.node_type == "connector" and deg[i] >= 3}
    if not keep:
        order = [i for i in lay.reading_order if nodes[i].importance == "major"]
        if len(order) > 3:
            order = [order[0], order[(len(order) - 1) // 2], order[-1]]
        keep = set(order)

    def priority(i):
        n = nodes[i]
        if i in endpoints:
            return 5
        if i in layout_anchors or i in sampled:
            return 4
        if n.node_type in STRUCTURAL_TYPES and n.node_type != "connector":
            return 3
        if n.node_type == "connector" or n.importance == "connector":
            return 2
        if n.importance == "decorative":
            return 0
        return 1

    budget = coarse_budget(len(nodes))
    floor = min(COARSE_MIN_NODES, len(nodes))
    if len(keep) < floor:
        rest = sorted(set(nodes) - keep, key=lambda i: (-priority(i), i))
        keep |= set(rest[: floor - len(keep)])
    if len(keep) > budget:
        ranked = sorted(keep, key=lambda i: (priority(i), i))
        keep = set(ranked[len(keep) - budget:])
        keep |= endpoints
    out = _restrict(g, keep)
    return apply_text_policy(out, TextPolicy("low"))


def make_text_reduced(g):
    return apply_text_policy(make_light_skeleton(g), TextPolicy("none"))


def jitter_draws(node_ids, seed, rho):
    """Per-node (dx, dy, scale_w, scale_h), drawn in sorted id order."""
    rng = SplitMix64(seed)
    draws = {}
    for nid in sorted(node_ids):
        dx = rng.uniform(-rho, rho)
        dy = rng.uniform(-rho, rho)
        sw = rng.uniform(1.0 - 0.8 * rho, 1.0 + 0.8 * rho)
        sh = rng.uniform(1.0 - 0.8 * rho, 1.0 + 0.8 * rho)
        draws[nid] = (dx, dy, sw, sh)
    return draws


def jitter_box(box, dx, dy, sw, sh):
    """Shift the box centre by (dx, dy), then scale about the new centre (unclipped)."""
    hw, hh = (box.x2 - box.x1) / 2.0, (box.y2 - box.y1) / 2.0
    # written so that dx = dy = 0, sw = sh = 1 returns the box bit-for-bit
    return BBox(box.x1 + dx - hw * (sw - 1.0), box.y1 + dy - hh * (sh - 1.0),
                box.x2 + dx + hw * (sw - 1.0), box.y2 + dy + hh * (sh - 1.0))


def make_layout_jitter(g, seed, rho=DEFAULT_JITTER):
    if not 0.0 <= rho <= 0.5:
        raise ValueError("rho must lie in [0, 0.5]")
    out = make_medium_missing(g)
    draws = jitter_draws([n.id for n in out.nodes], seed, rho)
    for n in out.nodes:
        n.bbox = jitter_box(n.bbox, *draws[n.id])
    out = normalize_graph(out)
    nodes = out.node_map()
    for gr in out.groups:
        box = BBox.union(nodes[m].bbox for m in gr.members)
        gr.bbox = BBox(box.x1 - GROUP_PADDING, box.y1 - GROUP_PADDING,
                       box.x2 + GROUP_PADDING, box.y2 + GROUP_PADDING).clipped()
    return apply_text_policy(out, TextPolicy("medium"))


def prepare_graph(record):
    """Normalize and fill missing layout fields; the input to every variant builder."""
    return with_inferred_layout(normalize_graph(record))


def build_variant(g, variant, seed, rho=DEFAULT_JITTER):
    if variant == "light_skeleton":
        return make_light_skeleton(g)
    if variant == "medium_missing":
        return make_medium_missing(g)
    if variant == "coarse_layout":
        return make_coarse_layout(g, seed)
    if variant == "text_reduced":
        return make_text_reduced(g)
    if variant == "layout_jitter":
        return make_layout_jitter(g, seed, rho)
    raise ValueError(f"unknown variant {variant!r}")


def generate_variant_set(record, spec=SeedSpec()):
    """All five variants of ``record`` with their seeds and loss records."""
    g = prepare_graph(record)
    if not g.nodes:
        raise EmptyGraph(f"diagram {record.diagram_id!r} has no nodes")
    out = []
    for name in VARIANT_NAMES:
        seed = stable_seed(spec.global_seed, g.diagram_id, name)
        vg = build_variant(g, name, seed, spec.jitter_fraction)
        out.append(VariantRecord(g.diagram_id, name, seed, vg, compute_variant_loss(g, vg)))
    return out


class VariantSynthesizer(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping topology graphs to their five sketch variants."""

    def __init__(self, global_seed=0, jitter_fraction=DEFAULT_JITTER):
        self.global_seed = global_seed
        self.jitter_fraction = jitter_fraction

    def fit(self, X=None, y=None):
        SeedSpec(self.global_seed, self.jitter_fraction)
        return self

    def transform(self, X):
        spec = SeedSpec(self.global_seed, self.jitter_fraction)
        return [generate_variant_set(g, spec) for g in X]


def read_variant_records(path):
    """Parse a variant JSONL file back into :class:`VariantRecord` objects."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = loads_strict(line)
            if not isinstance(obj, dict):
                raise SchemaViolation("$", "expected a JSON object")
            out.append(VariantRecord.from_dict(obj))
        except MalformedJson as exc:
            raise MalformedJson(f"line {lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaViolation):
                raise SchemaViolation(f"line {lineno}: {exc.path}", str(exc)) from None
            raise SchemaViolation(f"line {lineno}", f"bad variant record: {exc}") from None
    return out
