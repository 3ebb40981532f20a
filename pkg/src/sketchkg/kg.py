"""Topology knowledge graphs: schema, parsing, normalization and layout inference.

A :class:`TopologyGraph` describes one diagram (or one sketch of it) as nodes,
directed edges, groups, free text and a layout record.  Records travel as JSON
lines of the form::

    {"diagram_id": ..., "image_ref": ...,
     "graph": {"nodes": [...], "edges": [...], "groups": [...],
               "texts": [...], "layout": {...}}}

Node ids are ordered lexicographically (Python ``str`` ordering, which equals
UTF-8 byte ordering) everywhere in the package.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

from ._jsonio import loads_strict
from .exceptions import IoFailure, MalformedJson, SchemaViolation

NODE_TYPES = (
    "input", "output", "module", "component", "container", "connector",
    "branch", "merge", "stage", "visual", "text", "other",
)
SHAPES = (
    "rectangle", "circle", "diamond", "image_panel", "table", "text",
    "container", "point", "line", "other",
)
IMPORTANCE = ("major", "minor", "connector", "decorative")
PATH_TYPES = ("flow", "containment", "feedback", "other")
DIRECTIONS = ("forward", "backward", "bidirectional", "undirected")
FLOW_DIRECTIONS = ("horizontal", "vertical", "mixed", "unknown")
TEXT_KINDS = ("role_title", "label", "legend", "annotation")

# mean |dx| vs mean |dy| ratio needed to call a layout horizontal/vertical
FLOW_RATIO = 1.25


@dataclass(frozen=True)
class BBox:
    x1: float = 0.0
    y1: float = 0.0
    x2: float = 0.0
    y2: float = 0.0

    @property
    def center(self):
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    def clipped(self):
        x1, y1, x2, y2 = (_unit(v) for v in (self.x1, self.y1, self.x2, self.y2))
        return BBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))

    def covers(self, other):
        return (self.x1 <= other.x1 and self.y1 <= other.y1
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    def is_valid(self):
        return 0.0 <= self.x1 <= self.x2 <= 1.0 and 0.0 <= self.y1 <= self.y2 <= 1.0

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]

    @staticmethod
    def union(boxes):
        boxes = list(boxes)
        return BBox(min(b.x1 for b in boxes), min(b.y1 for b in boxes),
                    max(b.x2 for b in boxes), max(b.y2 for b in boxes))


@dataclass
class NodeRecord:
    id: str
    name: str = ""
    node_type: str = "other"
    shape: str = "other"
    bbox: BBox = field(default_factory=BBox)
    center_x: float = 0.0
    center_y: float = 0.0
    group: Optional[str] = None
    importance: str = "major"


@dataclass
class EdgeRecord:
    source: str
    target: str
    path_type: str = "flow"
    direction: str = "forward"
    bridged_from: Optional[list] = None
    # False when the raw record carried no path_type; normalization may then
    # retype the edge as containment.
    typed: bool = True

    @property
    def key(self):
        return (self.source, self.target, self.path_type)


@dataclass
class GroupRecord:
    group_id: str
    label: str = ""
    members: list = field(default_factory=list)
    bbox: Optional[BBox] = None


@dataclass
class FreeText:
    kind: str
    content: str
    anchor: Optional[BBox] = None


@dataclass
class LayoutRecord:
    flow_direction: str = "unknown"
    topology_type: str = ""
    main_structure: str = ""
    main_path: list = field(default_factory=list)
    reading_order: list = field(default_factory=list)
    branch_points: list = field(default_factory=list)
    merge_points: list = field(default_factory=list)
    feedback_edges: list = field(default_factory=list)


@dataclass
class TopologyGraph:
    diagram_id: str = ""
    image_ref: Optional[str] = None
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    free_texts: list = field(default_factory=list)
    layout: LayoutRecord = field(default_factory=LayoutRecord)

    def node_ids(self):
        return [n.id for n in self.nodes]

    def node_map(self):
        return {n.id: n for n in self.nodes}

    def copy(self):
        return copy.deepcopy(self)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def _unit(v):
    v = float(v)
    if not math.isfinite(v):
        return 0.0
    return min(1.0, max(0.0, v))


def _enum(value, allowed, default):
    if isinstance(value, str):
        v = value.strip().lower()
        if v in allowed:
            return v
    return default


def _str_or_none(value):
    if value is None:
        return None
    s = str(value).strip()
    return s or None


def _number(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaViolation(path, "expected a number")
    v = float(value)
    return v if math.isfinite(v) else 0.0


def _parse_bbox(value, path):
    if value is None:
        return None
    if isinstance(value, dict):
        value = [value.get(k) for k in ("x1", "y1", "x2", "y2")]
    if not isinstance(value, list) or len(value) != 4:
        raise SchemaViolation(path, "bbox must be [x1, y1, x2, y2]")
    return BBox(*(_number(v, f"{path}[{i}]") for i, v in enumerate(value)))


def _id_list(value, path):
    if value is None:
        return []
    if not isinstance(value, list):
        raise SchemaViolation(path, "expected an array")
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, str):
            raise SchemaViolation(f"{path}[{i}]", "expected a string id")
        out.append(item)
    return out


def _parse_node(raw, path):
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "node must be an object")
    node_id = raw.get("id", "")
    if node_id is None:
        node_id = ""
    if not isinstance(node_id, str):
        raise SchemaViolation(f"{path}.id", "id must be a string")
    name = raw.get("name")
    bbox = _parse_bbox(raw.get("bbox"), f"{path}.bbox")
    cx = raw.get("center_x", raw.get("x"))
    cy = raw.get("center_y", raw.get("y"))
    cx = None if cx is None else _number(cx, f"{path}.center_x")
    cy = None if cy is None else _number(cy, f"{path}.center_y")
    if bbox is None:
        # degenerate box at the stated center
        bbox = BBox(cx or 0.0, cy or 0.0, cx or 0.0, cy or 0.0)
    if cx is None or cy is None:
        cx, cy = bbox.center
    return NodeRecord(
        id=node_id,
        name="" if name is None else str(name),
        node_type=_enum(raw.get("node_type", raw.get("type")), NODE_TYPES, "other"),
        shape=_enum(raw.get("shape"), SHAPES, "other"),
        bbox=bbox,
        center_x=cx,
        center_y=cy,
        group=_str_or_none(raw.get("group")),
        importance=_enum(raw.get("importance"), IMPORTANCE, "major"),
    )


def _parse_edge(raw, path):
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "edge must be an object")
    src, dst = raw.get("source"), raw.get("target")
    for key, v in (("source", src), ("target", dst)):
        if not isinstance(v, str):
            raise SchemaViolation(f"{path}.{key}", "must be a string id")
    has_type = raw.get("path_type") is not None
    bridged = raw.get("bridged_from")
    return EdgeRecord(
        source=src,
        target=dst,
        path_type=_enum(raw.get("path_type"), PATH_TYPES, "other") if has_type else "flow",
        direction=_enum(raw.get("direction"), DIRECTIONS, "forward")
        if raw.get("direction") is not None else "forward",
        bridged_from=_id_list(bridged, f"{path}.bridged_from") or None,
        typed=has_type,
    )


def _parse_group(raw, path):
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "group must be an object")
    gid = raw.get("group_id", raw.get("id"))
    if not isinstance(gid, str):
        raise SchemaViolation(f"{path}.group_id", "must be a string")
    label = raw.get("label", raw.get("name"))
    return GroupRecord(
        group_id=gid,
        label="" if label is None else str(label),
        members=_id_list(raw.get("members"), f"{path}.members"),
        bbox=_parse_bbox(raw.get("bbox"), f"{path}.bbox"),
    )


def _parse_text(raw, path):
    if isinstance(raw, str):
        raw = {"kind": "annotation", "content": raw}
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "text must be an object")
    content = raw.get("content", raw.get("text"))
    return FreeText(
        kind=_enum(raw.get("kind"), TEXT_KINDS, "annotation"),
        content="" if content is None else str(content),
        anchor=_parse_bbox(raw.get("anchor"), f"{path}.anchor"),
    )


def _parse_layout(raw, path):
    if raw is None:
        return LayoutRecord()
    if not isinstance(raw, dict):
        raise SchemaViolation(path, "layout must be an object")
    feedback = []
    for i, pair in enumerate(raw.get("feedback_edges") or []):
        if isinstance(pair, dict):
            pair = [pair.get("source"), pair.get("target")]
        if (not isinstance(pair, list) or len(pair) != 2
                or not all(isinstance(p, str) for p in pair)):
            raise SchemaViolation(f"{path}.feedback_edges[{i}]", "expected [source, target]")
        feedback.append((pair[0], pair[1]))
    main_structure = raw.get("main_structure")
    topology_type = raw.get("topology_type")
    return LayoutRecord(
        flow_direction=_enum(raw.get("flow_direction"), FLOW_DIRECTIONS, "unknown"),
        topology_type="" if topology_type is None else str(topology_type),
        main_structure="" if main_structure is None else str(main_structure),
        main_path=_id_list(raw.get("main_path"), f"{path}.main_path"),
        reading_order=_id_list(raw.get("reading_order"), f"{path}.reading_order"),
        branch_points=_id_list(raw.get("branch_points"), f"{path}.branch_points"),
        merge_points=_id_list(raw.get("merge_points"), f"{path}.merge_points"),
        feedback_edges=feedback,
    )


def graph_from_dict(obj):
    """Build a :class:`TopologyGraph` from an already-decoded record."""
    if not isinstance(obj, dict):
        raise SchemaViolation("$", "record must be a JSON object")
    body = obj.get("graph", obj)
    if not isinstance(body, dict):
        raise SchemaViolation("$.graph", "must be an object")
    base = "$.graph" if "graph" in obj else "$"
    for key in ("nodes", "edges"):
        if not isinstance(body.get(key), list):
            raise SchemaViolation(f"{base}.{key}", "missing array")

    image_ref = _str_or_none(obj.get("image_ref", obj.get("image_path")))
    diagram_id = obj.get("diagram_id")
    if diagram_id is None:
        diagram_id = os.path.splitext(os.path.basename(image_ref))[0] if image_ref else ""
    if not isinstance(diagram_id, str):
        raise SchemaViolation("$.diagram_id", "must be a string")

    groups_raw = body.get("groups") or []
    texts_raw = body.get("texts", body.get("free_texts")) or []
    for key, val in (("groups", groups_raw), ("texts", texts_raw)):
        if not isinstance(val, list):
            raise SchemaViolation(f"{base}.{key}", "expected an array")
    return TopologyGraph(
        diagram_id=diagram_id,
        image_ref=image_ref,
        nodes=[_parse_node(n, f"{base}.nodes[{i}]") for i, n in enumerate(body["nodes"])],
        edges=[_parse_edge(e, f"{base}.edges[{i}]") for i, e in enumerate(body["edges"])],
        groups=[_parse_group(g, f"{base}.groups[{i}]") for i, g in enumerate(groups_raw)],
        free_texts=[_parse_text(t, f"{base}.texts[{i}]") for i, t in enumerate(texts_raw)],
        layout=_parse_layout(body.get("layout"), f"{base}.layout"),
    )


def parse_graph_record(text):
    """Parse one JSON line into a :class:`TopologyGraph`.

    Unknown enum strings fall back to ``other``/``unknown``.  Missing fields
    take defaults: ``importance="major"``, ``path_type="flow"``,
    ``direction="forward"``, empty strings and lists elsewhere.

    Raises :class:`MalformedJson` (with byte offset) on a syntax error and
    :class:`SchemaViolation` (with a JSON path) on a structural one.
    """
    obj = loads_strict(text)
    return graph_from_dict(obj)


def _is_container(node):
    return node.shape == "container" or node.node_type == "container"


def normalize_graph(g, diagnostics=None):
    """Clean a parsed graph so it satisfies every :class:`TopologyGraph` invariant.

    Normalization is total and idempotent.  It drops nodes without ids (and
    later duplicates), clips geometry to the unit square, retypes untyped
    edges pointing into containers as ``containment``, removes dangling edges,
    self-loops and duplicates (first occurrence wins), filters groups and
    layout lists to surviving nodes and recomputes group boxes.  Nodes, edges
    and groups come back sorted by id / edge key.

    If ``diagnostics`` is a list, a human-readable note is appended for every
    element that was dropped.
    """
    notes = diagnostics if diagnostics is not None else []

    nodes = {}
    for i, n in enumerate(g.nodes):
        node_id = n.id if isinstance(n.id, str) else ""
        if not node_id.strip():
            notes.append(f"node[{i}] dropped: empty id")
            continue
        if node_id in nodes:
            notes.append(f"node[{i}] dropped: duplicate id {node_id!r}")
            continue
        box = n.bbox.clipped()
        cx, cy = box.center
        nodes[node_id] = NodeRecord(
            id=node_id,
            name=(n.name or "").strip(),
            node_type=n.node_type if n.node_type in NODE_TYPES else "other",
            shape=n.shape if n.shape in SHAPES else "other",
            bbox=box,
            center_x=cx,
            center_y=cy,
            group=n.group or None,
            importance=n.importance if n.importance in IMPORTANCE else "major",
        )

    edges, seen = [], set()
    for i, e in enumerate(g.edges):
        if e.source not in nodes or e.target not in nodes:
            notes.append(f"edge[{i}] dropped: dangling {e.source!r}->{e.target!r}")
            continue
        if e.source == e.target:
            notes.append(f"edge[{i}] dropped: self-loop on {e.source!r}")
            continue
        path_type = e.path_type if e.path_type in PATH_TYPES else "other"
        if not e.typed:
            path_type = "containment" if _is_container(nodes[e.target]) else "flow"
        bridged = [b for b in (e.bridged_from or []) if b not in (e.source, e.target)]
        edge = EdgeRecord(e.source, e.target, path_type,
                          e.direction if e.direction in DIRECTIONS else "forward",
                          bridged or None, True)
        if edge.key in seen:
            notes.append(f"edge[{i}] dropped: duplicate {edge.key}")
            continue
        seen.add(edge.key)
        edges.append(edge)
    edges.sort(key=lambda e: e.key)

    groups, seen_groups = [], set()
    for g_rec in g.groups:
        if not g_rec.group_id or g_rec.group_id in seen_groups:
            continue
        members = list(dict.fromkeys(m for m in g_rec.members if m in nodes))
        if not members:
            notes.append(f"group {g_rec.group_id!r} dropped: no surviving members")
            continue
        seen_groups.add(g_rec.group_id)
        groups.append(GroupRecord(
            group_id=g_rec.group_id,
            label=(g_rec.label or "").strip(),
            members=sorted(members),
            bbox=BBox.union(nodes[m].bbox for m in members),
        ))
    groups.sort(key=lambda gr: gr.group_id)

    texts = []
    for t in g.free_texts:
        content = (t.content or "").strip()
        if not content:
            continue
        texts.append(FreeText(t.kind if t.kind in TEXT_KINDS else "annotation", content,
                              t.anchor.clipped() if t.anchor is not None else None))

    lay = g.layout

    def keep(ids):
        return [i for i in ids if i in nodes]

    layout = LayoutRecord(
        flow_direction=lay.flow_direction if lay.flow_direction in FLOW_DIRECTIONS else "unknown",
        topology_type=lay.topology_type or "",
        main_structure=(lay.main_structure or "").strip(),
        main_path=list(dict.fromkeys(keep(lay.main_path))),
        reading_order=list(dict.fromkeys(keep(lay.reading_order))),
        branch_points=list(dict.fromkeys(keep(lay.branch_points))),
        merge_points=list(dict.fromkeys(keep(lay.merge_points))),
        feedback_edges=list(dict.fromkeys(
            (s, t) for s, t in lay.feedback_edges if s in nodes and t in nodes)),
    )
    if not nodes:
        notes.append("graph has no usable nodes")
    return TopologyGraph(
        diagram_id=g.diagram_id or "",
        image_ref=g.image_ref,
        nodes=[nodes[k] for k in sorted(nodes)],
        edges=edges,
        groups=groups,
        free_texts=texts,
        layout=layout,
    )


def flow_edges(g):
    """Edges that carry information flow, i.e. everything except containment."""
    return [e for e in g.edges if e.path_type != "containment"]


def feedback_edge_set(node_ids, edges):
    """Back edges of a DFS over ``node_ids`` in lexicographic order.

    Removing them leaves the directed graph acyclic.
    """
    succ = {n: [] for n in node_ids}
    for e in edges:
        succ[e.source].append(e.target)
    for n in succ:
        succ[n] = sorted(set(succ[n]))
    white, gray, black = 0, 1, 2
    color = dict.fromkeys(node_ids, white)
    back = []
    for root in sorted(node_ids):
        if color[root] != white:
            continue
        color[root] = gray
        stack = [(root, iter(succ[root]))]
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                color[node] = black
                stack.pop()
            elif color[child] == gray:
                back.append((node, child))
            elif color[child] == white:
                color[child] = gray
                stack.append((child, iter(succ[child])))
    return back


def _topological_order(node_ids, succ):
    indeg = dict.fromkeys(node_ids, 0)
    for n in node_ids:
        for m in succ[n]:
            indeg[m] += 1
    ready = sorted(n for n in node_ids if indeg[n] == 0)
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
        ready.sort()
    return order


def _longest_path(starts, ends, node_ids, succ):
    """Longest start->end path by node count; ties go to the smallest id sequence."""
    order = _topological_order(node_ids, succ)
    best = {}
    for v in reversed(order):
        cands = [(v,)] if v in ends else []
        cands.extend((v,) + best[u] for u in succ[v] if u in best)
        if cands:
            best[v] = min(cands, key=lambda p: (-len(p), p))
    found = [best[s] for s in starts if s in best]
    return list(min(found, key=lambda p: (-len(p), p))) if found else []


def infer_main_path(g):
    nodes = g.node_map()
    ids = sorted(nodes)
    edges = flow_edges(g)
    if not edges:
        return []
    back = set(feedback_edge_set(ids, edges))
    succ = {n: set() for n in ids}
    indeg = dict.fromkeys(ids, 0)
    for e in edges:
        if (e.source, e.target) in back:
            continue
        if e.target not in succ[e.source]:
            succ[e.source].add(e.target)
            indeg[e.target] += 1
    succ = {n: sorted(s) for n, s in succ.items()}
    touched = {e.source for e in edges} | {e.target for e in edges}
    sources = [n for n in ids if indeg[n] == 0 and n in touched]
    sinks = [n for n in ids if not succ[n] and n in touched]
    inputs = [n for n in ids if nodes[n].node_type == "input"]
    outputs = [n for n in ids if nodes[n].node_type == "output"]
    path = _longest_path(inputs or sources, set(outputs or sinks), ids, succ)
    if len(path) < 2:
        path = _longest_path(sources, set(sinks), ids, succ)
    return path if len(path) >= 2 else []


def infer_flow_direction(g):
    nodes = g.node_map()
    edges = flow_edges(g)
    if edges:
        dx = math.fsum(abs(nodes[e.target].center_x - nodes[e.source].center_x) for e in edges)
        dy = math.fsum(abs(nodes[e.target].center_y - nodes[e.source].center_y) for e in edges)
        dx, dy = dx / len(edges), dy / len(edges)
    else:
        # no edges: compare the spread of node centres instead
        if len(nodes) < 2:
            return "unknown"
        xs = [n.center_x for n in g.nodes]
        ys = [n.center_y for n in g.nodes]
        mx, my = math.fsum(xs) / len(xs), math.fsum(ys) / len(ys)
        dx = math.sqrt(math.fsum((x - mx) ** 2 for x in xs) / len(xs))
        dy = math.sqrt(math.fsum((y - my) ** 2 for y in ys) / len(ys))
    if dx == 0.0 and dy == 0.0:
        return "unknown" if not edges else "mixed"
    if dx >= FLOW_RATIO * dy:
        return "horizontal"
    if dy >= FLOW_RATIO * dx:
        return "vertical"
    return "mixed"


def infer_reading_order(g, flow_direction):
    if flow_direction == "horizontal":
        key = lambda n: (n.center_x, n.center_y, n.id)  # noqa: E731
    else:
        key = lambda n: (n.center_y, n.center_x, n.id)  # noqa: E731
    return [n.id for n in sorted(g.nodes, key=key)]


def infer_layout_fields(g):
    """Fill missing layout fields of a normalized graph; present ones stay as they are.

    branch/merge points are nodes with out/in-degree >= 2 over non-containment
    edges; the main path is the longest input-to-output path once DFS back
    edges are removed; flow direction compares mean edge spans along x and y.
    Returns a new :class:`LayoutRecord`.
    """
    lay = copy.deepcopy(g.layout)
    edges = flow_edges(g)
    ids = sorted(n.id for n in g.nodes)
    if not lay.branch_points:
        out_deg = dict.fromkeys(ids, 0)
        for s in {(e.source, e.target) for e in edges}:
            out_deg[s[0]] += 1
        lay.branch_points = [n for n in ids if out_deg[n] >= 2]
    if not lay.merge_points:
        in_deg = dict.fromkeys(ids, 0)
        for s in {(e.source, e.target) for e in edges}:
            in_deg[s[1]] += 1
        lay.merge_points = [n for n in ids if in_deg[n] >= 2]
    if not lay.main_path:
        lay.main_path = infer_main_path(g)
    if lay.flow_direction == "unknown":
        lay.flow_direction = infer_flow_direction(g)
    if not lay.reading_order:
        lay.reading_order = infer_reading_order(g, lay.flow_direction)
    return lay


def with_inferred_layout(g):
    out = g.copy()
    out.layout = infer_layout_fields(g)
    return out


def validate_graph(g):
    """Return every invariant violation in ``g``; never mutates it."""
    v = []
    ids = set()
    for i, n in enumerate(g.nodes):
        if not isinstance(n.id, str) or not n.id.strip():
            v.append(f"node[{i}]: empty id")
            continue
        if n.id in ids:
            v.append(f"node {n.id!r}: duplicate id")
        ids.add(n.id)
        if not n.bbox.is_valid():
            v.append(f"node {n.id!r}: bbox {n.bbox.as_list()} outside unit square or inverted")
        cx, cy = n.bbox.center
        if abs(n.center_x - cx) > 1e-12 or abs(n.center_y - cy) > 1e-12:
            v.append(f"node {n.id!r}: center is not the bbox midpoint")
    keys = set()
    for e in g.edges:
        label = f"edge {e.source!r}->{e.target!r} ({e.path_type})"
        for end in (e.source, e.target):
            if end not in ids:
                v.append(f"{label}: unknown node id {end!r}")
        if e.source == e.target:
            v.append(f"{label}: self-loop")
        if e.key in keys:
            v.append(f"{label}: duplicate edge")
        keys.add(e.key)
        if e.bridged_from is not None:
            if not e.bridged_from:
                v.append(f"{label}: empty bridged_from")
            if e.source in e.bridged_from or e.target in e.bridged_from:
                v.append(f"{label}: bridged_from contains an endpoint")
    for gr in g.groups:
        if not gr.members:
            v.append(f"group {gr.group_id!r}: no members")
        nmap = g.node_map()
        for m in gr.members:
            if m not in ids:
                v.append(f"group {gr.group_id!r}: unknown member {m!r}")
            elif gr.bbox is not None and not gr.bbox.covers(nmap[m].bbox):
                v.append(f"group {gr.group_id!r}: bbox does not cover member {m!r}")
    for t in g.free_texts:
        if not t.content:
            v.append(f"text ({t.kind}): empty content")
    lay = g.layout
    for name in ("main_path", "reading_order", "branch_points", "merge_points"):
        for item in getattr(lay, name):
            if item not in ids:
                v.append(f"layout.{name}: unknown node id {item!r}")
    if len(set(lay.main_path)) != len(lay.main_path):
        v.append("layout.main_path: repeated node id")
    for s, t in lay.feedback_edges:
        if s not in ids or t not in ids:
            v.append(f"layout.feedback_edges: unknown endpoint in ({s!r}, {t!r})")
    return ValidationReport(v)


def _bbox_json(b):
    return None if b is None else b.as_list()


def graph_body_to_dict(g):
    """The ``graph`` object of a canonical record, keys in schema order."""
    nodes = []
    for n in sorted(g.nodes, key=lambda n: n.id):
        nodes.append({
            "id": n.id, "name": n.name, "node_type": n.node_type, "shape": n.shape,
            "bbox": n.bbox.as_list(), "center_x": n.center_x, "center_y": n.center_y,
            "group": n.group, "importance": n.importance,
        })
    edges = []
    for e in sorted(g.edges, key=lambda e: e.key):
        d = {"source": e.source, "target": e.target,
             "path_type": e.path_type, "direction": e.direction}
        if e.bridged_from:
            d["bridged_from"] = list(e.bridged_from)
        edges.append(d)
    lay = g.layout
    return {
        "nodes": nodes,
        "edges": edges,
        "groups": [{"group_id": gr.group_id, "label": gr.label, "members": list(gr.members),
                    "bbox": _bbox_json(gr.bbox)} for gr in g.groups],
        "texts": [{"kind": t.kind, "content": t.content, "anchor": _bbox_json(t.anchor)}
                  for t in g.free_texts],
        "layout": {
            "flow_direction": lay.flow_direction,
            "topology_type": lay.topology_type,
            "main_structure": lay.main_structure,
            "main_path": list(lay.main_path),
            "reading_order": list(lay.reading_order),
            "branch_points": list(lay.branch_points),
            "merge_points": list(lay.merge_points),
            "feedback_edges": [list(p) for p in lay.feedback_edges],
        },
    }


def graph_to_dict(g):
    return {"diagram_id": g.diagram_id, "image_ref": g.image_ref, "graph": graph_body_to_dict(g)}


def dumps_compact(obj):
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def serialize_graph(g):
    """Canonical single-line JSON for ``g`` (no trailing newline)."""
    return dumps_compact(graph_to_dict(g))


def read_graph_records(path):
    """Parse every non-blank line of a JSONL file; errors carry the line number."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    graphs = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            graphs.append(parse_graph_record(line))
        except MalformedJson as exc:
            raise MalformedJson(f"line {lineno}: {exc}") from None
        except SchemaViolation as exc:
            raise SchemaViolation(f"line {lineno}: {exc.path}", str(exc).split(": ", 1)[-1]) from None
    return graphs
