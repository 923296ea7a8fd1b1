"""Edge features: binned similarity blocks, lexical surface block, L1 projections.

Every feature is binary, so an assembled vector is fully described by its active
indices.  :class:`SimilarityCache` holds the raw pairwise similarities for one
label set; binning against a model turns them into active indices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from difflib import SequenceMatcher
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import BIN_WIDTH, BINNED_BLOCKS, ROOT, SURF_WIDTH, Dataset, FeatureLayout, Model
from .embed_stats import (MIN_IMAGES, VAR_FLOOR, GaussianSummary, fit_gaussian,
                          global_variance, log_density, top_k_refit, vissim)

N_EDGES = BIN_WIDTH - 2  # 18 edges -> 19 value bins, slot 0 = missing
VISUAL_BLOCKS = ("S-V1", "PC-V1", "PC-V2")
TEXT_BLOCKS = ("S-T1", "PC-T1")


@dataclass
class BinSpec:
    block: str
    edges: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        if self.edges.shape != (N_EDGES,):
            raise ValueError(f"{self.block}: expected {N_EDGES} edges, got {self.edges.shape}")
        if not np.all(np.isfinite(self.edges)) or np.any(np.diff(self.edges) <= 0):
            raise ValueError(f"{self.block}: bin edges must be finite and strictly increasing")

    def index(self, value: float) -> int:
        return int(np.searchsorted(self.edges, value, side="right"))

    def slot(self, value: float | None) -> int:
        """Position inside the 20-wide block: 0 for missing, else 1 + bin index."""
        if value is None or not np.isfinite(value):
            return 0
        return 1 + self.index(value)


def build_bins(values: Sequence[float], block: str = "") -> BinSpec:
    """Equal-frequency bins from 18 interior quantiles of ``values``."""
    v = np.asarray(values, dtype=float).ravel()
    if len(v) < N_EDGES + 1:
        raise ValueError(f"need at least {N_EDGES + 1} values to bin, got {len(v)}")
    if not np.all(np.isfinite(v)):
        raise ValueError("bin values must be finite")
    edges = np.quantile(np.sort(v), np.arange(1, N_EDGES + 1) / (N_EDGES + 1))
    # runs of equal quantiles are spread upward by 1e-9 per rank
    k = 0
    while k < N_EDGES:
        j = k
        while j + 1 < N_EDGES and edges[j + 1] == edges[k]:
            j += 1
        if j > k:
            edges[k:j + 1] = edges[k] + 1e-9 * np.arange(1, j - k + 2)
        k = j + 1
    for k in range(1, N_EDGES):
        if edges[k] <= edges[k - 1]:
            edges[k] = np.nextafter(edges[k - 1], np.inf)
    return BinSpec(block, edges)


def one_hot(spec: BinSpec, value: float | None) -> np.ndarray:
    out = np.zeros(BIN_WIDTH)
    out[spec.slot(value)] = 1.0
    return out


# ---------------------------------------------------------------------------
# lexical surface block

def _norm(name: str) -> str:
    return " ".join(name.lower().replace("_", " ").replace("-", " ").split())


def _common_suffix(a: str, b: str) -> int:
    k = 0
    while k < min(len(a), len(b)) and a[-1 - k] == b[-1 - k]:
        k += 1
    return k


def surface_features(child: str, parent: str | None) -> np.ndarray:
    """32 binary lexical features of a (child, parent) name pair.

    Layout: child capitalized, parent capitalized, ends-with, contains,
    common-suffix length one-hot (0..7), LCS/max-length one-hot (10 bins),
    length difference one-hot (10 bins over [-20, 20]).
    A missing parent (the pseudo-root) yields all zeros.
    """
    out = np.zeros(SURF_WIDTH)
    if parent is None:
        return out
    c, p = _norm(child), _norm(parent)
    out[0] = child[:1].isupper()
    out[1] = parent[:1].isupper()
    out[2] = c.endswith(p)
    out[3] = p in c
    out[4 + min(_common_suffix(c, p), 7)] = 1
    lcs = SequenceMatcher(None, c, p, autojunk=False).find_longest_match(0, len(c), 0, len(p)).size
    ratio = lcs / max(len(c), len(p), 1)
    out[12 + min(int(ratio * 10), 9)] = 1
    diff = min(max(len(c) - len(p), -20), 20)
    out[22 + min(int((diff + 20) / 4), 9)] = 1
    return out


# ---------------------------------------------------------------------------
# sparse linear projections

@dataclass
class ProjectionMatrix:
    matrix: np.ndarray
    lam: float
    objective: float
    history: list[float] = field(default_factory=list, repr=False)

    def __call__(self, x):
        return self.matrix @ np.asarray(x, dtype=float)


def projection_objective(phi, x, y, lam) -> float:
    r = x @ phi.T - y
    return float(np.sum(r * r) / len(x) + lam * np.abs(phi).sum())


def learn_projection(pairs_in, pairs_out, lam: float = 1e-3, tol: float = 1e-8,
                     max_iter: int = 10_000,
                     callback: Callable[[int, float], None] | None = None) -> ProjectionMatrix:
    """L1-penalized least-squares map from input vectors to target vectors.

    Minimizes mean ||phi x - y||^2 + lam * |phi|_1 by iterative soft-thresholding
    from phi = 0 with step 1/Lipschitz, which keeps the objective non-increasing.
    """
    x = np.asarray(pairs_in, dtype=float)
    y = np.asarray(pairs_out, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise ValueError("need matching non-empty 2-d arrays of input and target vectors")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite projection training data")
    n = len(x)
    phi = np.zeros((y.shape[1], x.shape[1]))
    lip = 2.0 * np.linalg.norm(x, 2) ** 2 / n
    obj = projection_objective(phi, x, y, lam)
    history = [obj]
    if lip == 0:
        return ProjectionMatrix(phi, lam, obj, history)
    step = 1.0 / lip
    xty = x.T @ y
    xtx = x.T @ x
    for it in range(max_iter):
        grad = 2.0 / n * (phi @ xtx - xty.T)
        z = phi - step * grad
        phi = np.sign(z) * np.maximum(np.abs(z) - step * lam, 0.0)
        new = projection_objective(phi, x, y, lam)
        history.append(new)
        if callback is not None:
            callback(it, new)
        done = abs(obj - new) <= tol * max(abs(obj), 1e-300)
        obj = new
        if done:
            break
    return ProjectionMatrix(phi, lam, obj, history)


# ---------------------------------------------------------------------------
# pairwise similarity cache

@dataclass
class SimilarityCache:
    """Raw similarity values for every ordered pair of one label set.

    Matrices are indexed ``[parent, child]`` (or symmetric for sibling terms),
    row/column 0 being the pseudo-root; NaN marks a missing value.
    """

    names: list[str]
    has_img: np.ndarray
    has_word: np.ndarray
    vis: np.ndarray       # log vissim, symmetric
    cos: np.ndarray       # word cosine, symmetric
    pcv1: np.ndarray
    pcv2: np.ndarray
    pct1: np.ndarray
    surf: np.ndarray      # (N+1, N+1, 32) uint8
    gaussians: list[GaussianSummary | None]

    @property
    def n(self) -> int:
        return len(self.names) - 1

    @classmethod
    def build(cls, ds: Dataset, proj_image_word=None, proj_word_word=None,
              top_k: int | None = None, visual: bool = True,
              floor: float = VAR_FLOOR, min_images: int = MIN_IMAGES) -> "SimilarityCache":
        n = ds.n
        nan = np.full((n + 1, n + 1), np.nan)
        has_img = np.zeros(n + 1, dtype=bool)
        has_word = np.zeros(n + 1, dtype=bool)
        for it in ds.items:
            has_img[it.id] = visual and it.has_images
            has_word[it.id] = it.has_word
        gaussians: list[GaussianSummary | None] = [None] * (n + 1)
        vis, pcv1, pcv2 = nan.copy(), nan.copy(), nan.copy()
        img_ids = np.flatnonzero(has_img)
        if len(img_ids):
            fallback = global_variance(np.vstack([ds.item(k).image_vecs for k in img_ids]), floor)
            for k in img_ids:
                gaussians[k] = fit_gaussian(ds.item(k).image_vecs, floor, fallback, min_images)
            means = np.array([gaussians[k].mean for k in img_ids])
            # dens[i, j] = log N(mean_j; g_i)
            dens = np.array([log_density(gaussians[k], means) for k in img_ids])
            vis[np.ix_(img_ids, img_ids)] = np.logaddexp(dens, dens.T) - math.log(2)
            if top_k is None:
                pcv1[np.ix_(img_ids, img_ids)] = vis[np.ix_(img_ids, img_ids)]
            else:
                for m in img_ids:
                    pv = ds.item(m).image_vecs
                    for c in img_ids:
                        if c == m:
                            continue
                        g = top_k_refit(pv, gaussians[c], top_k, floor, fallback, min_images)
                        pcv1[m, c] = vissim(gaussians[c], g)
            if proj_image_word is not None:
                words = np.array([ds.item(m).word_vec if has_word[m] else np.full(ds.word_dim, np.nan)
                                  for m in range(1, n + 1)])
                pred = means @ proj_image_word.matrix.T  # (img items, b)
                for row, c in enumerate(img_ids):
                    d = np.linalg.norm(words - pred[row], axis=1)
                    pcv2[1:, c] = -d
        cos, pct1 = nan.copy(), nan.copy()
        word_ids = np.flatnonzero(has_word)
        if len(word_ids):
            w = np.array([ds.item(k).word_vec for k in word_ids])
            norms = np.linalg.norm(w, axis=1)
            safe = np.where(norms > 0, norms, 1.0)
            u = w / safe[:, None]
            cmat = u @ u.T
            cmat[norms == 0, :] = 0.0
            cmat[:, norms == 0] = 0.0
            cos[np.ix_(word_ids, word_ids)] = cmat
            if proj_word_word is not None:
                pred = w @ proj_word_word.matrix.T
                d = np.linalg.norm(w[:, None, :] - pred[None, :, :], axis=2)  # [parent, child]
                pct1[np.ix_(word_ids, word_ids)] = -d
        idx = np.arange(n + 1)
        for m in (vis, cos, pcv1, pcv2, pct1):
            m[idx, idx] = np.nan
        names = ds.names()
        surf = np.zeros((n + 1, n + 1, SURF_WIDTH), dtype=np.uint8)
        for p in range(1, n + 1):
            for c in range(1, n + 1):
                if p != c:
                    surf[p, c] = surface_features(names[c], names[p])
        return cls(names, has_img, has_word, vis, cos, pcv1, pcv2, pct1, surf, gaussians)

    # raw (unbinned) values; None = missing
    def sibling_visual(self, child: int, sibs: Sequence[int]) -> float | None:
        vals = [self.vis[child, s] for s in sibs if self.has_img[s]]
        if not self.has_img[child] or not vals:
            return None
        return float(logsumexp(vals) - math.log(len(vals)))

    def sibling_text(self, child: int, sibs: Sequence[int]) -> float | None:
        vals = [self.cos[child, s] for s in sibs if self.has_word[s]]
        if not self.has_word[child] or not vals:
            return None
        return float(np.mean(vals))

    def pair_value(self, block: str, parent: int, child: int) -> float | None:
        mat = {"PC-V1": self.pcv1, "PC-V2": self.pcv2, "PC-T1": self.pct1}[block]
        v = mat[parent, child]
        return None if np.isnan(v) else float(v)

    def training_values(self, block: str) -> np.ndarray:
        """Pooled finite values over all ordered non-root pairs, used to fit bins."""
        mat = {"S-V1": self.vis, "S-T1": self.cos, "PC-V1": self.pcv1,
               "PC-V2": self.pcv2, "PC-T1": self.pct1}[block]
        v = mat[1:, 1:].ravel()
        return v[np.isfinite(v)]


def block_values(cache: SimilarityCache, parent: int, child: int,
                 sibs: Sequence[int]) -> dict[str, float | None]:
    """Raw value feeding each binned block for one attachment."""
    if parent == ROOT:
        return {b: None for b in BINNED_BLOCKS}
    return {
        "S-V1": cache.sibling_visual(child, sibs),
        "PC-V1": cache.pair_value("PC-V1", parent, child),
        "PC-V2": cache.pair_value("PC-V2", parent, child),
        "S-T1": cache.sibling_text(child, sibs),
        "PC-T1": cache.pair_value("PC-T1", parent, child),
    }


def assemble(cache: SimilarityCache, model: Model, parent: int, child: int,
             sibs: Sequence[int]) -> np.ndarray:
    """Full feature vector of attaching ``child`` under ``parent`` next to ``sibs``."""
    if not 1 <= child <= cache.n:
        raise ValueError(f"invalid child index {child}")
    layout = model.layout
    f = np.zeros(layout.width)
    for block, value in block_values(cache, parent, child, sibs).items():
        f[layout[block].slice] = one_hot(model.bins[block], value)
    if parent != ROOT:
        f[layout["SURF"].slice] = cache.surf[parent, child]
    f[layout.bias] = float(parent == ROOT)
    return f


# ---------------------------------------------------------------------------
# compact tables for the sampler

STATIC_SLOTS = 3 + SURF_WIDTH + 1


def static_indices(cache: SimilarityCache, model: Model) -> np.ndarray:
    """Active feature indices that depend only on the (parent, child) pair.

    Returns an int array (N+1, N+1, k) padded with -1.  Sibling blocks are
    excluded; they depend on the sibling set and are binned on the fly.
    """
    n = cache.n
    layout = model.layout
    rows = []
    for block, mat in (("PC-V1", cache.pcv1), ("PC-V2", cache.pcv2), ("PC-T1", cache.pct1)):
        spec = model.bins[block]
        finite = np.isfinite(mat)
        slots = np.zeros(mat.shape, dtype=np.int64)
        slots[finite] = 1 + np.searchsorted(spec.edges, mat[finite], side="right")
        slots[ROOT, :] = 0
        rows.append(layout[block].offset + slots)
    surf_off = layout["SURF"].offset
    kmax = 3 + int(cache.surf.sum(axis=2).max(initial=0)) + 1
    out = np.full((n + 1, n + 1, kmax), -1, dtype=np.int64)
    for j, r in enumerate(rows):
        out[:, :, j] = r
    for p in range(n + 1):
        for c in range(1, n + 1):
            pos = 3
            if p == ROOT:
                out[p, c, pos] = layout.bias
                continue
            for b in np.flatnonzero(cache.surf[p, c]):
                out[p, c, pos] = surf_off + b
                pos += 1
    return out


def layout_slices(layout: FeatureLayout) -> dict[str, slice]:
    return {b.name: b.slice for b in layout.blocks}
