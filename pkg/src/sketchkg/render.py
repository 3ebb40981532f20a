"""Byte-deterministic SVG line sketches of topology graphs."""

from __future__ import annotations

from xml.sax.saxutils import escape, quoteattr

ELLIPSE_SHAPES = ("circle", "point")
DIAMOND_SHAPES = ("diamond",)


def _f(x):
    return f"{x:.2f}"


def _clip_to_box(cx, cy, tx, ty, box, canvas):
    """Point where the segment from the box center toward (tx, ty) leaves the box."""
    hw = box.width * canvas / 2
    hh = box.height * canvas / 2
    dx, dy = tx - cx, ty - cy
    if dx == 0 and dy == 0:
        return cx, cy
    t = min(hw / abs(dx) if dx else float("inf"), hh / abs(dy) if dy else float("inf"))
    t = min(t, 1.0)
    return cx + dx * t, cy + dy * t


def _node_shape(n, canvas):
    x1, y1 = n.bbox.x1 * canvas, n.bbox.y1 * canvas
    w, h = n.bbox.width * canvas, n.bbox.height * canvas
    cx, cy = x1 + w / 2, y1 + h / 2
    nid = quoteattr(n.id)
    if n.shape in ELLIPSE_SHAPES:
        return (f'<ellipse class="node" data-id={nid} cx="{_f(cx)}" cy="{_f(cy)}" '
                f'rx="{_f(w / 2)}" ry="{_f(h / 2)}"/>')
    if n.shape in DIAMOND_SHAPES:
        pts = f"{_f(cx)},{_f(y1)} {_f(x1 + w)},{_f(cy)} {_f(cx)},{_f(y1 + h)} {_f(x1)},{_f(cy)}"
        return f'<polygon class="node" data-id={nid} points="{pts}"/>'
    return (f'<rect class="node" data-id={nid} x="{_f(x1)}" y="{_f(y1)}" '
            f'width="{_f(w)}" height="{_f(h)}"/>')


def render_sketch_svg(g, canvas_px=1000):
    """Black-on-white SVG: node shapes, dashed group boxes, arrowed edges, centered labels.

    Containment edges are implied by group boxes and are not drawn.  Elements
    appear as groups, then nodes (by id), then edges (by key), then labels.
    """
    if canvas_px < 1:
        raise ValueError("canvas_px must be positive")
    c = canvas_px
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{c}" height="{c}" '
            f'viewBox="0 0 {c} {c}"')
    if not g.nodes:
        return head + "/>\n"
    font = c * 0.02
    out = [head + ">",
           '<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="6" '
           'markerHeight="6" orient="auto-start-reverse"><path d="M0,0 L10,5 L0,10 z"/></marker></defs>',
           '<g fill="none" stroke="black" stroke-width="2">']
    for gr in sorted(g.groups, key=lambda x: x.group_id):
        if gr.bbox is None:
            continue
        b = gr.bbox
        out.append(f'<rect class="group" data-id={quoteattr(gr.group_id)} x="{_f(b.x1 * c)}" '
                   f'y="{_f(b.y1 * c)}" width="{_f(b.width * c)}" height="{_f(b.height * c)}" '
                   f'stroke-dasharray="8 4"/>')
    nodes = sorted(g.nodes, key=lambda n: n.id)
    by_id = {n.id: n for n in nodes}
    for n in nodes:
        out.append(_node_shape(n, c))
    for e in sorted(g.edges, key=lambda e: e.key):
        if e.path_type == "containment":
            continue
        s, t = by_id[e.source], by_id[e.target]
        sx, sy = (v * c for v in s.bbox.center)
        tx, ty = (v * c for v in t.bbox.center)
        x1, y1 = _clip_to_box(sx, sy, tx, ty, s.bbox, c)
        x2, y2 = _clip_to_box(tx, ty, sx, sy, t.bbox, c)
        dash = ' stroke-dasharray="4 3"' if e.path_type == "feedback" else ""
        out.append(f'<line class="edge" x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                   f'marker-end="url(#arrow)"{dash}/>')
    out.append("</g>")
    out.append(f'<g font-family="sans-serif" font-size="{_f(font)}" text-anchor="middle" '
               f'dominant-baseline="middle" fill="black">')
    for n in nodes:
        if n.name:
            cx, cy = (v * c for v in n.bbox.center)
            out.append(f'<text class="label" x="{_f(cx)}" y="{_f(cy)}">{escape(n.name)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
