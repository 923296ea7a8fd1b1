"""Qualitative reports: per-layer block relevance and graph excerpts."""
from __future__ import annotations

import numpy as np

from .core import Model, Taxonomy


def layer_relevance(model: Model) -> dict[str, np.ndarray]:
    """Mean absolute weight of each block at each layer, l2-normalized over layers.

    A block whose weights are all zero gets an all-zero curve.
    """
    out = {}
    for block in model.layout.blocks:
        v = np.abs(model.weights[:, block.slice]).mean(axis=1)
        norm = np.linalg.norm(v)
        out[block.name] = v / norm if norm > 0 else np.zeros_like(v)
    return out


def relevance_rows(model: Model) -> list[dict]:
    return [{"block": name, "layer": l + 1, "relevance": repr(float(x))}
            for name, curve in layer_relevance(model).items() for l, x in enumerate(curve)]


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(tree: Taxonomy, names, reference: Taxonomy | None = None) -> str:
    """Graphviz text for a taxonomy.

    With a ``reference`` tree, edges missing from it are drawn red (``class=false``)
    and reference edges the tree lacks are added dashed blue (``class=missed``).
    """
    names = list(names)
    lines = ["digraph taxonomy {", "  rankdir=TB;", '  n0 [label="ROOT", shape=box];']
    for n in range(1, tree.n + 1):
        lines.append(f"  n{n} [label={_quote(names[n] if n < len(names) else str(n))}];")
    ref = set(reference.edges()) if reference is not None else None
    for p, c in tree.edges():
        if ref is not None and (p, c) not in ref:
            lines.append(f"  n{p} -> n{c} [class=false, color=red, penwidth=2];")
        else:
            lines.append(f"  n{p} -> n{c};")
    if ref is not None:
        mine = set(tree.edges())
        for p, c in sorted(ref - mine):
            lines.append(f"  n{p} -> n{c} [class=missed, color=blue, style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"
