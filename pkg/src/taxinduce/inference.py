"""Collapsed tree model scoring, Gibbs sampling of parents, and arborescence decoding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _chain
from .core import ROOT, Model, Taxonomy, descendants
from .features import SimilarityCache, assemble, static_indices

MST_EPS = 1e-12


@dataclass
class SamplerConfig:
    burn_in: int = 1000
    samples: int = 5000
    seed: int = 0
    init: str = "star"           # star | random-tree | given
    init_parent: Sequence[int] | None = None
    check: bool = False
    estimator: str = "conditional"  # conditional (Rao-Blackwellized) | counts

    def __post_init__(self):
        if self.estimator not in ("conditional", "counts"):
            raise ValueError(f"unknown marginal estimator {self.estimator!r}")
        if self.burn_in < 0 or self.samples < 1:
            raise ValueError("need burn_in >= 0 and samples >= 1")
        if self.init not in ("star", "random-tree", "given"):
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.init == "given" and self.init_parent is None:
            raise ValueError("init='given' requires init_parent")


@dataclass
class MarginalTable:
    """``probs[n-1, m]`` estimates p(z_n = m) for nodes n = 1..N."""

    probs: np.ndarray
    samples: int
    burn_in: int = 0

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    def p(self, n: int, m: int) -> float:
        return float(self.probs[n - 1, m])

    @classmethod
    def from_counts(cls, counts: np.ndarray, samples: int, burn_in: int = 0) -> "MarginalTable":
        c = np.asarray(counts, dtype=float)[1:]
        return cls(c / c.sum(axis=1, keepdims=True), samples, burn_in)

    @classmethod
    def merge(cls, tables: Sequence["MarginalTable"]) -> "MarginalTable":
        """Sample-count weighted average of independent chains."""
        total = sum(t.samples for t in tables)
        probs = sum(t.probs * t.samples for t in tables) / total
        return cls(probs, total, tables[0].burn_in)


# ---------------------------------------------------------------------------
# reference scoring (dense feature vectors)

def _alpha(model: Model, n: int, alpha) -> np.ndarray:
    return model.alpha_for(n) if alpha is None else np.asarray(alpha, dtype=float)


def edge_score(model: Model, cache: SimilarityCache, t: Taxonomy, parent: int, child: int) -> float:
    """log g_w for ``child`` placed under ``parent`` beside parent's other children in ``t``."""
    sibs = [c for c in t.children()[parent] if c != child]
    depth = t.depth(parent) + 1
    f = assemble(cache, model, parent, child, sibs)
    return float(model.weights[model.layer(depth)] @ f)


def log_joint(model: Model, cache: SimilarityCache, t: Taxonomy, alpha=None) -> float:
    """Unnormalized log probability of a tree with the popularity weights integrated out."""
    a = _alpha(model, t.n, alpha)
    kids = t.children()
    depths = t.depths()
    total = float(sum(math.lgamma(len(kids[m]) + a[m]) for m in range(t.n + 1)))
    for c in range(1, t.n + 1):
        p = int(t.parent[c])
        f = assemble(cache, model, p, c, [s for s in kids[p] if s != c])
        total += float(model.weights[model.layer(int(depths[c]))] @ f)
    return total


def feature_sums(model: Model, cache: SimilarityCache, t: Taxonomy) -> np.ndarray:
    """Per-layer sums of edge feature vectors, layers taken from child depths in ``t``."""
    out = np.zeros_like(model.weights)
    kids = t.children()
    depths = t.depths()
    for c in range(1, t.n + 1):
        p = int(t.parent[c])
        out[model.layer(int(depths[c]))] += assemble(cache, model, p, c, [s for s in kids[p] if s != c])
    return out


def candidate_parents(t: Taxonomy, n: int) -> list[int]:
    banned = descendants(t, n) | {n}
    return [m for m in range(t.n + 1) if m not in banned]


def parent_logits(model: Model, cache: SimilarityCache, t: Taxonomy, n: int, alpha=None) -> np.ndarray:
    """Unnormalized log conditional of z_n over all nodes (-inf where forbidden).

    Uses only factors touching the candidate parent's child group and n's
    subtree, whose layers shift with the new depth.
    """
    a = _alpha(model, t.n, alpha)
    out = np.full(t.n + 1, -np.inf)
    sub = descendants(t, n)
    base = t.copy()
    base.parent[n] = -1  # detached
    kids: list[list[int]] = [[] for _ in range(t.n + 1)]
    for c in range(1, t.n + 1):
        if c != n:
            kids[base.parent[c]].append(c)
    rel = {n: 0}
    order = [n]
    for u in order:
        for v in kids[u]:
            rel[v] = rel[u] + 1
            order.append(v)
    depth = np.zeros(t.n + 1, dtype=int)
    for m in candidate_parents(t, n):
        depth[m] = t.depth(m) if m not in sub else 0

    def group(m, members, d):
        w = model.weights[model.layer(d)]
        return sum(w @ assemble(cache, model, m, c, [s for s in members if s != c]) for c in members)

    internal = [(base.parent[v], v) for v in order[1:]]
    internal_f = [assemble(cache, model, p, v, [s for s in kids[p] if s != v]) for p, v in internal]
    for m in candidate_parents(t, n):
        d = depth[m] + 1
        s = math.log(len(kids[m]) + a[m])
        s += group(m, kids[m] + [n], d) - group(m, kids[m], d)
        for (p, v), f in zip(internal, internal_f):
            s += model.weights[model.layer(d + rel[v])] @ f
        out[m] = s
    return out


def sample_parent(model: Model, cache: SimilarityCache, t: Taxonomy, n: int,
                  rng: np.random.Generator, alpha=None) -> int:
    """Draw a new parent for ``n`` from its full conditional and reattach it in place."""
    if n < 1:
        raise ValueError("the pseudo-root has no parent")
    logits = parent_logits(model, cache, t, n, alpha)
    p = np.exp(logits - logits.max())
    p /= p.sum()
    m = int(rng.choice(len(p), p=p))
    t.parent[n] = m
    return m


# ---------------------------------------------------------------------------
# compiled chain

@dataclass
class ChainTables:
    """Dense arrays the compiled sampler reads; built once per (label set, model)."""

    static: np.ndarray
    static_idx: np.ndarray
    w_sv: np.ndarray
    w_st: np.ndarray
    vis: np.ndarray
    has_img: np.ndarray
    cos: np.ndarray
    has_word: np.ndarray
    sv_edges: np.ndarray
    st_edges: np.ndarray
    sv_off: int
    st_off: int
    width: int
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, model: Model, cache: SimilarityCache) -> "ChainTables":
        idx = static_indices(cache, model)
        tables = cls(np.empty(0), idx, np.empty(0), np.empty(0),
                     np.nan_to_num(cache.vis, nan=0.0), cache.has_img.copy(),
                     np.nan_to_num(cache.cos, nan=0.0), cache.has_word.copy(),
                     model.bins["S-V1"].edges, model.bins["S-T1"].edges,
                     model.layout["S-V1"].offset, model.layout["S-T1"].offset,
                     model.layout.width)
        tables.set_weights(model.weights)
        return tables

    def set_weights(self, weights: np.ndarray) -> None:
        wpad = np.hstack([weights, np.zeros((weights.shape[0], 1))])
        self.static = np.ascontiguousarray(wpad[:, self.static_idx].sum(axis=-1))
        self.w_sv = np.ascontiguousarray(weights[:, self.sv_off:self.sv_off + 20])
        self.w_st = np.ascontiguousarray(weights[:, self.st_off:self.st_off + 20])

    def logits(self, parent, n: int, alpha) -> np.ndarray:
        return _chain.conditional_logits(np.asarray(parent, dtype=np.int64), n, self.static,
                                         self.w_sv, self.w_st, self.vis, self.has_img, self.cos,
                                         self.has_word, self.sv_edges, self.st_edges,
                                         np.asarray(alpha, dtype=float))

    def run(self, parent0, alpha, burn_in: int, samples: int, seed: int, free=None,
            collect_features: bool = False, check: bool = False, soft: bool = False):
        parent0 = np.asarray(parent0, dtype=np.int64).copy()
        parent0[0] = -1
        if free is None:
            free = np.ones(len(parent0), dtype=np.bool_)
        return _chain.run(parent0, np.asarray(free, dtype=np.bool_), burn_in, samples, seed,
                          self.static, self.w_sv, self.w_st, self.vis, self.has_img, self.cos,
                          self.has_word, self.sv_edges, self.st_edges,
                          np.asarray(alpha, dtype=float), self.static_idx, self.sv_off,
                          self.st_off, self.width, collect_features, check, soft)


def random_tree(n: int, rng: np.random.Generator) -> Taxonomy:
    """Random recursive tree: node k attaches to a uniformly chosen earlier node of a random order."""
    order = rng.permutation(np.arange(1, n + 1))
    parent = np.full(n + 1, -1, dtype=np.int64)
    placed = [ROOT]
    for v in order:
        parent[v] = placed[rng.integers(len(placed))]
        placed.append(int(v))
    return Taxonomy(parent)


def initial_parents(cfg: SamplerConfig, n: int) -> np.ndarray:
    if cfg.init == "star":
        return Taxonomy.star(n).parent
    if cfg.init == "random-tree":
        return random_tree(n, np.random.default_rng(cfg.seed)).parent
    return Taxonomy(cfg.init_parent).parent


def run_chain(model: Model, cache: SimilarityCache, cfg: SamplerConfig, alpha=None,
              free=None, tables: ChainTables | None = None) -> MarginalTable:
    """Marginal parent probabilities from one seeded Gibbs chain."""
    n = cache.n
    if n < 1:
        raise ValueError("empty label set")
    a = _alpha(model, n, alpha)
    tables = tables or ChainTables.build(model, cache)
    counts, _, _, bad = tables.run(initial_parents(cfg, n), a, cfg.burn_in, cfg.samples,
                                   cfg.seed, free=free, check=cfg.check,
                                   soft=cfg.estimator == "conditional")
    if bad:
        raise RuntimeError(f"sampler visited {bad} invalid states")
    return MarginalTable.from_counts(counts, cfg.samples, cfg.burn_in)


# ---------------------------------------------------------------------------
# Chu-Liu-Edmonds

def max_arborescence(score: np.ndarray, root: int = ROOT) -> np.ndarray:
    """Maximum-weight spanning arborescence of a dense graph.

    ``score[m, n]`` is the weight of edge m -> n.  Returns the parent array
    (root entry -1).  Ties go to the smaller parent index.
    """
    s = np.array(score, dtype=float)
    k = s.shape[0]
    np.fill_diagonal(s, -np.inf)
    s[:, root] = -np.inf
    return _cle(s, root)


def _cle(s: np.ndarray, root: int) -> np.ndarray:
    k = s.shape[0]
    best = np.argmax(s, axis=0)  # first maximum = smallest parent id
    best[root] = -1
    cycle = _find_cycle(best, root)
    if cycle is None:
        return best
    in_cycle = np.zeros(k, dtype=bool)
    in_cycle[cycle] = True
    rest = [v for v in range(k) if not in_cycle[v]]
    c = len(rest)  # index of the contracted node
    idx = {v: i for i, v in enumerate(rest)}
    cyc_score = s[best[cycle], cycle]  # weight of the cycle edge entering each cycle node
    sub = np.full((c + 1, c + 1), -np.inf)
    sub[:c, :c] = s[np.ix_(rest, rest)]
    # entering the cycle at v replaces v's cycle edge
    enter = s[np.ix_(rest, cycle)] - cyc_score[None, :]
    enter_arg = np.argmax(enter, axis=1)
    sub[:c, c] = enter[np.arange(c), enter_arg]
    leave = s[np.ix_(cycle, rest)]
    leave_arg = np.argmax(leave, axis=0)
    sub[c, :c] = leave[leave_arg, np.arange(c)]
    sub_parent = _cle(sub, idx[root])
    parent = np.full(k, -1, dtype=np.int64)
    for v in rest:
        p = sub_parent[idx[v]]
        if p == -1:
            continue
        parent[v] = cycle[leave_arg[idx[v]]] if p == c else rest[p]
    entry_from = sub_parent[c]
    entry_node = cycle[enter_arg[entry_from]]
    for v in cycle:
        parent[v] = best[v]
    parent[entry_node] = rest[entry_from]
    return parent


def _find_cycle(best: np.ndarray, root: int) -> list[int] | None:
    k = len(best)
    color = np.zeros(k, dtype=np.int8)  # 0 new, 1 on current path, 2 done
    for start in range(k):
        if color[start]:
            continue
        path = []
        v = start
        while v != -1 and color[v] == 0:
            color[v] = 1
            path.append(v)
            v = best[v]
        if v != -1 and color[v] == 1:
            return path[path.index(v):]
        for u in path:
            color[u] = 2
    return None


def mst_decode(marginals: MarginalTable) -> Taxonomy:
    """Maximum spanning arborescence over log(marginal + eps) edge weights."""
    n = marginals.n
    w = np.full((n + 1, n + 1), -np.inf)
    w[:, 1:] = np.log(marginals.probs.T + MST_EPS)
    return Taxonomy(max_arborescence(w))
