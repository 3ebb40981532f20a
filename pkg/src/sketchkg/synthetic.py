"""Seeded synthetic topology graphs for desk-scale experiments and tests."""

from __future__ import annotations

from .hashing import SplitMix64, fnv1a_64
from .kg import BBox, EdgeRecord, FreeText, GroupRecord, LayoutRecord, NodeRecord, TopologyGraph

VOCAB = (
    "encoder decoder attention cross self multi head token patch image text "
    "feature fusion projection embedding layer block module transformer convolution "
    "pooling residual norm linear gate memory query key value graph node edge "
    "retrieval index ranker reranker planner generator discriminator critic policy "
    "reward sampler diffusion noise latent vae prior posterior backbone adapter "
    "lora prompt instruction agent tool planner executor verifier judge loss "
    "contrastive alignment sketch diagram layout style render canvas caption "
    "segment mask detector tracker optical flow depth point cloud voxel mesh "
    "audio speech spectrogram wave vision language video frame clip temporal "
    "spatial pyramid upsample downsample skip connection bottleneck expert router "
    "mixture cache buffer queue scheduler optimizer gradient update teacher student "
    "distill quantize prune search beam decode output input stage head tail"
).split()

NODE_KINDS = ("module", "component", "stage", "visual")


def _words(rng, lo, hi):
    k = lo + rng.randbelow(hi - lo + 1)
    return " ".join(VOCAB[rng.randbelow(len(VOCAB))] for _ in range(k))


def random_topology_graph(seed, n_nodes=None, diagram_id=None, min_nodes=3, max_nodes=40):
    """A plausible method-diagram graph: an input->output chain plus side structure.

    Besides the chain there are parallel branches that rejoin it, decorative
    and connector nodes, an optional container group with containment edges,
    an occasional feedback edge and a couple of free-text items.  Node ids are
    a seeded permutation so that id order and topological order disagree.
    """
    rng = SplitMix64(seed)
    n = n_nodes if n_nodes is not None else min_nodes + rng.randbelow(max_nodes - min_nodes + 1)
    n = max(1, n)
    diagram_id = diagram_id or f"d{fnv1a_64(str(seed)) % 10**8:08d}"
    ids = rng.shuffle([f"n{i:02d}" for i in range(n)])
    horizontal = rng.random() < 0.6

    chain_len = max(min(n, 2), min(n, 2 + rng.randbelow(max(1, (n + 1) // 2))))
    chain = ids[:chain_len]
    rest = ids[chain_len:]

    nodes, edges = {}, []

    def place(nid, along, across, name, node_type, shape="rectangle", importance="major"):
        w, h = 0.04 + 0.06 * rng.random(), 0.04 + 0.06 * rng.random()
        a, c = 0.05 + 0.9 * along, 0.05 + 0.9 * across
        cx, cy = (a, c) if horizontal else (c, a)
        box = BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2).clipped()
        mx, my = box.center
        nodes[nid] = NodeRecord(nid, name, node_type, shape, box, mx, my, None, importance)

    for i, nid in enumerate(chain):
        along = i / max(1, chain_len - 1)
        if i == 0:
            kind, name = "input", _words(rng, 1, 3)
        elif i == chain_len - 1:
            kind, name = "output", _words(rng, 1, 3)
        else:
            kind, name = NODE_KINDS[rng.randbelow(len(NODE_KINDS))], _words(rng, 1, 5)
        importance = "major" if rng.random() < 0.7 or kind in ("input", "output") else "minor"
        place(nid, along, 0.5 + 0.05 * (rng.random() - 0.5), name, kind, importance=importance)
        if i:
            edges.append(EdgeRecord(chain[i - 1], nid, "flow", "forward"))

    groups = []
    container = None
    for nid in rest:
        r = rng.random()
        lo = rng.randbelow(chain_len)
        hi = min(chain_len - 1, lo + 1 + rng.randbelow(3))
        along = (lo + hi) / 2 / max(1, chain_len - 1)
        across = 0.15 + 0.2 * rng.random() if rng.random() < 0.5 else 0.65 + 0.2 * rng.random()
        if r < 0.35:
            # side branch that leaves the chain and rejoins it
            place(nid, along, across, _words(rng, 1, 4), NODE_KINDS[rng.randbelow(len(NODE_KINDS))],
                  importance="minor" if rng.random() < 0.6 else "major")
            edges.append(EdgeRecord(chain[lo], nid, "flow", "forward"))
            if hi != lo:
                edges.append(EdgeRecord(nid, chain[hi], "flow", "forward"))
        elif r < 0.55:
            place(nid, along, across, _words(rng, 0, 2), "visual", "image_panel", "decorative")
            if rng.random() < 0.5:
                edges.append(EdgeRecord(nid, chain[lo], "flow", "forward"))
        elif r < 0.7:
            place(nid, along, across, "", "connector", "point", "connector")
            edges.append(EdgeRecord(chain[lo], nid, "flow", "forward"))
            edges.append(EdgeRecord(nid, chain[hi], "flow", "forward"))
            if rng.random() < 0.5 and rest:
                edges.append(EdgeRecord(nid, rest[rng.randbelow(len(rest))], "flow", "forward"))
        elif r < 0.78 and container is None:
            container = nid
            place(nid, along, across, _words(rng, 1, 3), "container", "container", "major")
        else:
            place(nid, along, across, _words(rng, 1, 4), "component", importance="minor")
            edges.append(EdgeRecord(nid, chain[hi], "flow", "forward"))

    if container is not None:
        members = sorted(rng.sample(chain[1:-1] or chain, 1 + rng.randbelow(3)))
        for m in members:
            edges.append(EdgeRecord(m, container, "containment", "undirected"))
        groups.append(GroupRecord("g0", _words(rng, 1, 4), members, None))
        for m in members:
            nodes[m].group = "g0"
    if chain_len >= 3 and rng.random() < 0.3:
        a = 1 + rng.randbelow(chain_len - 2)
        b = a + 1 + rng.randbelow(chain_len - a - 1) if chain_len - a - 1 > 0 else a
        if b != a:
            edges.append(EdgeRecord(chain[b], chain[a], "feedback", "backward"))

    texts = [FreeText("role_title", _words(rng, 2, 6))]
    if rng.random() < 0.5:
        texts.append(FreeText("annotation", _words(rng, 1, 5)))
    layout = LayoutRecord(main_structure=f"{_words(rng, 3, 8)} pipeline")
    return TopologyGraph(diagram_id, f"{diagram_id}.png", [nodes[i] for i in ids], edges,
                         groups, texts, layout)


def random_corpus(n, seed, min_nodes=6, max_nodes=30):
    """``n`` graphs with ids ``d0000``, ``d0001``, ..."""
    out = []
    for i in range(n):
        sub = fnv1a_64(f"{seed}|corpus|{i}")
        out.append(random_topology_graph(sub, diagram_id=f"d{i:04d}",
                                         min_nodes=min_nodes, max_nodes=max_nodes))
    return out
