import itertools
import json

import pytest
from hypothesis import given, strategies as st

from sketchkg.exceptions import MalformedJson, SchemaViolation
from sketchkg.kg import (
    BBox, EdgeRecord, GroupRecord, NodeRecord, TopologyGraph, feedback_edge_set, graph_to_dict,
    infer_layout_fields, normalize_graph, parse_graph_record, serialize_graph, validate_graph,
    with_inferred_layout,
)
from sketchkg.synthetic import random_topology_graph

from conftest import chain, edge, make_graph, node


# ------------------------------------------------------------------ parsing

def test_minimal_record():
    g = parse_graph_record('{"diagram_id":"x","graph":{"nodes":[{"id":"n1"}],"edges":[]}}')
    assert len(g.nodes) == 1 and g.edges == []
    assert g.nodes[0].importance == "major"
    assert g.nodes[0].node_type == "other" and g.nodes[0].shape == "other"


def test_edge_defaults():
    g = make_graph([node("n1"), node("n2")], [edge("n1", "n2")])
    e = g.edges[0]
    assert (e.path_type, e.direction) == ("flow", "forward")


def test_unknown_enums_fall_back():
    g = make_graph([node("n1", node_type="gizmo", shape="blob")],
                   layout={"flow_direction": "diagonal"})
    assert g.nodes[0].node_type == "other" and g.nodes[0].shape == "other"
    assert g.layout.flow_direction == "unknown"


def test_top_level_record_and_extraction_aliases():
    # the shape emitted by the extraction prompt: no "graph" wrapper, x/y centres
    raw = {"image_path": "figs/fig7.png", "nodes": [
        {"id": "n1", "name": "a", "type": "input", "x": 0.2, "y": 0.3}], "edges": []}
    g = parse_graph_record(json.dumps(raw))
    assert g.diagram_id == "fig7"
    assert g.nodes[0].node_type == "input"
    assert (g.nodes[0].center_x, g.nodes[0].center_y) == (0.2, 0.3)


def test_malformed_json_reports_byte_offset():
    with pytest.raises(MalformedJson) as err:
        parse_graph_record('{"nodes": [é')
    assert err.value.offset == len('{"nodes": ['.encode())
    with pytest.raises(MalformedJson):
        parse_graph_record(b"\xff\xfe")
    with pytest.raises(MalformedJson):
        parse_graph_record('{"nodes": [], "edges": []} trailing')


@pytest.mark.parametrize("body, path", [
    ({"edges": []}, "$.graph.nodes"),
    ({"nodes": []}, "$.graph.edges"),
    ({"nodes": [{"id": 3}], "edges": []}, "$.graph.nodes[0].id"),
    ({"nodes": [], "edges": [{"source": "a"}]}, "$.graph.edges[0].target"),
])
def test_schema_violations_name_path(body, path):
    with pytest.raises(SchemaViolation) as err:
        parse_graph_record(json.dumps({"diagram_id": "d", "graph": body}))
    assert err.value.path == path


# ------------------------------------------------------------------ normalization

def test_bbox_clipped_and_center_recomputed():
    g = normalize_graph(make_graph([node("n1", box=[-0.1, 0.2, 1.3, 0.4])]))
    n = g.nodes[0]
    assert n.bbox.as_list() == [0.0, 0.2, 1.0, 0.4]
    assert n.center_x == 0.5 and n.center_y == pytest.approx(0.3, abs=1e-15)


def test_duplicate_edge_collapses():
    g = normalize_graph(make_graph([node("n1"), node("n2")],
                                   [edge("n1", "n2", "flow"), edge("n1", "n2", "flow", "backward")]))
    assert [(e.key, e.direction) for e in g.edges] == [(("n1", "n2", "flow"), "forward")]


def test_self_loop_removed():
    g = normalize_graph(make_graph([node("n1")], [edge("n1", "n1")]))
    assert g.edges == []


def test_empty_id_node_dropped_with_its_edges_and_layout_mentions():
    nodes = [node("n1"), node("n2"), node(""), node("n4"), node("n5")]
    # the raw record refers to the id-less node as "n3"
    edges = [edge("n1", "n2"), edge("n2", "n3"), edge("n3", "n4"), edge("n4", "n5")]
    layout = {"main_path": ["n1", "n2", "n3", "n4", "n5"]}
    diag = []
    g = normalize_graph(make_graph(nodes, edges, layout=layout), diagnostics=diag)
    assert g.node_ids() == ["n1", "n2", "n4", "n5"]
    assert {(e.source, e.target) for e in g.edges} == {("n1", "n2"), ("n4", "n5")}
    assert g.layout.main_path == ["n1", "n2", "n4", "n5"]
    assert any("empty id" in d for d in diag)


def test_untyped_edge_into_container_becomes_containment():
    nodes = [node("a"), node("box", node_type="container", shape="container")]
    g = normalize_graph(make_graph(nodes, [edge("a", "box")]))
    assert g.edges[0].path_type == "containment"
    g2 = normalize_graph(make_graph(nodes, [edge("a", "box", "flow")]))
    assert g2.edges[0].path_type == "flow"


def test_group_members_filtered_and_bbox_recomputed():
    nodes = [node("a", box=[0.1, 0.1, 0.2, 0.2]), node("b", box=[0.5, 0.4, 0.6, 0.7])]
    groups = [{"group_id": "g", "label": "stage", "members": ["a", "b", "ghost"],
               "bbox": [0.0, 0.0, 0.05, 0.05]},
              {"group_id": "h", "members": ["ghost"]}]
    g = normalize_graph(make_graph(nodes, groups=groups))
    assert [gr.group_id for gr in g.groups] == ["g"]
    assert g.groups[0].members == ["a", "b"]
    assert g.groups[0].bbox.as_list() == [0.1, 0.1, 0.6, 0.7]


def test_normalize_empty_graph_is_total():
    diag = []
    g = normalize_graph(make_graph([node(""), node("  ")]), diagnostics=diag)
    assert g.nodes == [] and "graph has no usable nodes" in diag


@given(st.integers(0, 2**64 - 1))
def test_normalize_idempotent_and_monotone(seed):
    raw = random_topology_graph(seed, max_nodes=20)
    raw.edges.append(EdgeRecord(raw.nodes[0].id, raw.nodes[0].id))
    raw.edges.append(EdgeRecord(raw.nodes[0].id, "missing"))
    once = normalize_graph(raw)
    twice = normalize_graph(once)
    assert serialize_graph(once) == serialize_graph(twice)
    assert len(once.nodes) <= len(raw.nodes) and len(once.edges) <= len(raw.edges)
    assert validate_graph(once).ok, validate_graph(once).violations


@given(st.integers(0, 2**64 - 1))
def test_serialize_parse_round_trip(seed):
    g = with_inferred_layout(normalize_graph(random_topology_graph(seed, max_nodes=25)))
    text = serialize_graph(g)
    assert serialize_graph(parse_graph_record(text)) == text


def test_serializer_key_order():
    g = normalize_graph(make_graph([node("b"), node("a")], [edge("b", "a")]))
    d = json.loads(serialize_graph(g))
    assert list(d) == ["diagram_id", "image_ref", "graph"]
    assert list(d["graph"]) == ["nodes", "edges", "groups", "texts", "layout"]
    assert [n["id"] for n in d["graph"]["nodes"]] == ["a", "b"]
    assert graph_to_dict(g) == d


# ------------------------------------------------------------------ layout inference

def _layout(nodes, edges, **kw):
    return infer_layout_fields(normalize_graph(make_graph(nodes, edges, **kw)))


def test_chain_layout():
    nodes, edges = chain(["n1", "n2", "n3"])
    lay = _layout(nodes, edges)
    assert lay.branch_points == [] and lay.merge_points == []
    assert lay.main_path == ["n1", "n2", "n3"]
    assert lay.flow_direction == "horizontal"


def test_diamond_branch_and_merge():
    nodes = [node(i) for i in ("n1", "n2", "n3", "n4")]
    edges = [edge("n1", "n2"), edge("n1", "n3"), edge("n2", "n4"), edge("n3", "n4")]
    lay = _layout(nodes, edges)
    assert lay.branch_points == ["n1"] and lay.merge_points == ["n4"]
    assert lay.main_path == ["n1", "n2", "n4"]  # tie broken by smallest id sequence


def test_edge_free_layout_uses_center_spread():
    nodes = [node("c", box=[0.85, 0.45, 0.95, 0.55]), node("a", box=[0.05, 0.45, 0.15, 0.55]),
             node("b", box=[0.45, 0.45, 0.55, 0.55])]
    lay = _layout(nodes, [])
    assert lay.flow_direction == "horizontal"
    assert lay.reading_order == ["a", "b", "c"]
    assert lay.main_path == []


def test_vertical_flow_and_reading_order():
    nodes, edges = chain(["top", "mid", "bot"], horizontal=False)
    lay = _layout(nodes, edges)
    assert lay.flow_direction == "vertical"
    assert lay.reading_order == ["top", "mid", "bot"]


def test_present_fields_untouched():
    nodes, edges = chain(["n1", "n2", "n3"])
    lay = _layout(nodes, edges, layout={"main_path": ["n2", "n3"], "flow_direction": "mixed"})
    assert lay.main_path == ["n2", "n3"] and lay.flow_direction == "mixed"


def test_containment_edges_do_not_count_for_branching():
    nodes = [node("a"), node("b"), node("box", node_type="container", shape="container")]
    lay = _layout(nodes, [edge("a", "b"), edge("a", "box")])
    assert lay.branch_points == []


def test_feedback_edges_break_cycles():
    nodes = [node(i) for i in "abcd"]
    edges = [edge("a", "b"), edge("b", "c"), edge("c", "a"), edge("c", "d")]
    g = normalize_graph(make_graph(nodes, edges))
    assert feedback_edge_set(g.node_ids(), g.edges) == [("c", "a")]
    assert infer_layout_fields(g).main_path == ["a", "b", "c", "d"]


def _brute_main_path(g):
    """Enumerate every simple path of the DAG left after removing back edges."""
    ids = sorted(g.node_ids())
    flow = [e for e in g.edges if e.path_type != "containment"]
    if not flow:
        return []
    back = set(feedback_edge_set(ids, flow))
    succ = {n: sorted({e.target for e in flow if e.source == n and (n, e.target) not in back})
            for n in ids}
    touched = {e.source for e in flow} | {e.target for e in flow}
    has_in = {t for n in ids for t in succ[n]}
    sources = [n for n in ids if n not in has_in and n in touched]
    sinks = [n for n in ids if not succ[n] and n in touched]
    types = {n.id: n.node_type for n in g.nodes}

    def paths_from(v):
        yield (v,)
        for u in succ[v]:
            for p in paths_from(u):
                yield (v,) + p

    def best(starts, ends):
        cands = [p for s in starts for p in paths_from(s) if p[-1] in ends]
        return list(min(cands, key=lambda p: (-len(p), p))) if cands else []

    ins = [n for n in ids if types[n] == "input"]
    outs = {n for n in ids if types[n] == "output"}
    path = best(ins or sources, outs or set(sinks))
    if len(path) < 2:
        path = best(sources, set(sinks))
    return path if len(path) >= 2 else []


@st.composite
def small_digraphs(draw):
    n = draw(st.integers(1, 8))
    ids = [f"v{i}" for i in range(n)]
    pairs = [p for p in itertools.permutations(ids, 2)]
    chosen = draw(st.lists(st.sampled_from(pairs), max_size=14, unique=True)) if pairs else []
    types = draw(st.lists(st.sampled_from(["input", "output", "module", "module"]),
                          min_size=n, max_size=n))
    nodes = [node(i, node_type=t) for i, t in zip(ids, types)]
    return normalize_graph(make_graph(nodes, [edge(a, b) for a, b in chosen]))


@given(small_digraphs())
def test_main_path_matches_enumeration_oracle(g):
    assert infer_layout_fields(g).main_path == _brute_main_path(g)


@given(small_digraphs())
def test_removing_feedback_edges_leaves_dag(g):
    back = set(feedback_edge_set(g.node_ids(), g.edges))
    succ = {n: [e.target for e in g.edges if e.source == n and (n, e.target) not in back]
            for n in g.node_ids()}
    state = {}

    def acyclic(v):
        state[v] = 1
        for u in succ[v]:
            if state.get(u) == 1 or (u not in state and not acyclic(u)):
                return False
        state[v] = 2
        return True

    assert all(acyclic(v) for v in g.node_ids() if v not in state)


@given(st.integers(0, 2**64 - 1))
def test_inference_deterministic(seed):
    g = normalize_graph(random_topology_graph(seed))
    assert infer_layout_fields(g) == infer_layout_fields(g.copy())


# ------------------------------------------------------------------ validation

def test_validate_clean_fixture():
    nodes, edges = chain(["a", "b", "c"])
    assert validate_graph(with_inferred_layout(normalize_graph(make_graph(nodes, edges)))).ok


def test_validate_dangling_edge():
    g = TopologyGraph("x", None, [NodeRecord("a", bbox=BBox(0, 0, 0.1, 0.1), center_x=0.05,
                                             center_y=0.05)], [EdgeRecord("a", "zz")])
    report = validate_graph(g)
    assert len(report.violations) == 1 and "'zz'" in report.violations[0]


def test_validate_group_not_covering_member():
    a = NodeRecord("a", bbox=BBox(0.1, 0.1, 0.3, 0.3), center_x=0.2, center_y=0.2)
    b = NodeRecord("b", bbox=BBox(0.5, 0.5, 0.6, 0.6), center_x=0.55, center_y=0.55)
    g = TopologyGraph("x", None, [a, b], [], [GroupRecord("g1", "", ["a", "b"],
                                                          BBox(0.0, 0.0, 0.4, 0.4))])
    report = validate_graph(g)
    assert report.violations == ["group 'g1': bbox does not cover member 'b'"]
