import json

import pytest
from hypothesis import HealthCheck, settings

from sketchkg.kg import parse_graph_record

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def node(nid, name="", node_type="module", shape="rectangle", box=None, importance="major",
         group=None):
    box = box or [0.1, 0.1, 0.2, 0.2]
    return {"id": nid, "name": name, "type": node_type, "shape": shape, "bbox": box,
            "importance": importance, "group": group}


def edge(s, t, path_type=None, direction=None):
    d = {"source": s, "target": t}
    if path_type is not None:
        d["path_type"] = path_type
    if direction is not None:
        d["direction"] = direction
    return d


def make_graph(nodes, edges=(), groups=(), texts=(), layout=None, diagram_id="fx"):
    rec = {"diagram_id": diagram_id, "image_ref": f"{diagram_id}.png",
           "graph": {"nodes": list(nodes), "edges": list(edges), "groups": list(groups),
                     "texts": list(texts), "layout": layout or {}}}
    return parse_graph_record(json.dumps(rec))


def chain(ids, types=None, importance=None, horizontal=True):
    """Nodes laid out on a line with edges between consecutive ids."""
    nodes = []
    n = len(ids)
    for i, nid in enumerate(ids):
        a = 0.05 + 0.9 * i / max(1, n - 1)
        box = [a - 0.03, 0.47, a + 0.03, 0.53] if horizontal else [0.47, a - 0.03, 0.53, a + 0.03]
        nodes.append(node(nid, f"{nid} block", (types or {}).get(nid, "module"),
                          box=box, importance=(importance or {}).get(nid, "major")))
    return nodes, [edge(a, b) for a, b in zip(ids, ids[1:])]


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
