"""Supervised EM training of the layer-wise weights."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import BINNED_BLOCKS, ROOT, Dataset, FeatureLayout, Model, Taxonomy
from .features import (N_EDGES, BinSpec, SimilarityCache, build_bins, learn_projection)
from .inference import ChainTables, feature_sums, log_joint

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    em_iterations: int = 300
    eta0: float = 0.1
    decay_every: int = 100
    layers: int = 6
    lam: float = 1e-3
    top_k: int | None = None
    visual: bool = True
    burn_in: int = 5
    samples: int = 20
    seed: int = 0
    patience: int | None = 50
    normalize: str = "nodes"    # nodes | tree | layer | none

    def __post_init__(self):
        if self.eta0 <= 0 or self.em_iterations < 1 or self.layers < 1:
            raise ValueError("need eta0 > 0, em_iterations >= 1, layers >= 1")

    def learning_rate(self, iteration: int) -> float:
        return self.eta0 / 10.0 ** (iteration // self.decay_every)


@dataclass
class TrainingTree:
    dataset: Dataset
    gold: Taxonomy

    def __post_init__(self):
        if self.gold.n != self.dataset.n:
            raise ValueError(f"tree has {self.gold.n} nodes, dataset {self.dataset.n}")


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def header(self, layers: int) -> list[str]:
        return ["iteration", "eta", "surrogate"] + [f"grad_norm_l{l + 1}" for l in range(layers)]


def estimate_alpha(trees) -> tuple[np.ndarray, float]:
    """Depth-bucketed Dirichlet pseudo-counts from gold trees.

    Entry d is 1 + the mean child count of nodes at depth d (entry 0 is the
    pseudo-root's fan-out).  The second value pools all non-root nodes and
    serves nodes whose depth is unknown.
    """
    trees = list(trees)
    if not trees:
        raise ValueError("need at least one tree")
    max_d = max(t.height() for t in trees)
    tot = np.zeros(max_d + 1)
    cnt = np.zeros(max_d + 1)
    for t in trees:
        q = t.child_counts()
        d = t.depths()
        np.add.at(tot, d, q)
        np.add.at(cnt, d, 1)
    alpha = 1.0 + np.divide(tot, cnt, out=np.zeros_like(tot), where=cnt > 0)
    pooled = 1.0 + tot[1:].sum() / max(cnt[1:].sum(), 1)
    return alpha, float(pooled)


def fit_projections(trees, lam: float):
    """Image-to-word and word-to-word projections from gold (child, parent) pairs."""
    img_in, img_out, w_in, w_out = [], [], [], []
    for tr in trees:
        ds = tr.dataset
        for p, c in tr.gold.edges():
            if p == ROOT:
                continue
            parent, child = ds.item(p), ds.item(c)
            if not parent.has_word:
                continue
            if child.has_images:
                img_in.append(child.image_vecs.mean(axis=0))
                img_out.append(parent.word_vec)
            if child.has_word:
                w_in.append(child.word_vec)
                w_out.append(parent.word_vec)
    phi = learn_projection(img_in, img_out, lam) if img_in else None
    phi_t = learn_projection(w_in, w_out, lam) if w_in else None
    return phi, phi_t


def fit_bins(caches) -> dict[str, BinSpec]:
    bins = {}
    for block in BINNED_BLOCKS:
        vals = np.concatenate([c.training_values(block) for c in caches])
        if len(vals) >= N_EDGES + 1:
            bins[block] = build_bins(vals, block)
        else:
            # block never observed; it will only ever fire its missing slot
            bins[block] = BinSpec(block, np.arange(N_EDGES, dtype=float))
    return bins


def prepare_model(trees, cfg: TrainConfig) -> tuple[Model, list[SimilarityCache]]:
    """Projections, bins and Dirichlet prior fitted on training trees; weights zero."""
    trees = list(trees)
    if not trees:
        raise ValueError("empty training set")
    phi, phi_t = fit_projections(trees, cfg.lam)
    caches = [SimilarityCache.build(t.dataset, phi, phi_t, cfg.top_k, cfg.visual) for t in trees]
    alpha, pooled = estimate_alpha(t.gold for t in trees)
    layout = FeatureLayout.default()
    model = Model(layout, np.zeros((cfg.layers, layout.width)), fit_bins(caches), phi, phi_t,
                  alpha, pooled, cfg.top_k, cfg.visual)
    return model, caches


def gold_alpha(model: Model, gold: Taxonomy) -> np.ndarray:
    return model.alpha_for(gold.n, gold.depths())


def gold_feature_sums(model: Model, cache: SimilarityCache, gold: Taxonomy) -> np.ndarray:
    return feature_sums(model, cache, gold)


def expected_feature_sums(model: Model, cache: SimilarityCache, burn_in: int = 100,
                          samples: int = 1000, seed: int = 0, alpha=None, init=None,
                          tables: ChainTables | None = None):
    """Monte-Carlo E[per-layer feature sums] under the model; returns (sums, final parents)."""
    tables = tables or ChainTables.build(model, cache)
    a = model.alpha_for(cache.n) if alpha is None else alpha
    init = Taxonomy.star(cache.n).parent if init is None else init
    _, sums, last, _ = tables.run(init, a, burn_in, samples, seed, collect_features=True)
    return sums / samples, last


def gradient(model: Model, cache: SimilarityCache, gold: Taxonomy, burn_in: int = 100,
             samples: int = 1000, seed: int = 0, alpha=None) -> np.ndarray:
    a = gold_alpha(model, gold) if alpha is None else alpha
    expected, _ = expected_feature_sums(model, cache, burn_in, samples, seed, a)
    return gold_feature_sums(model, cache, gold) - expected


def _gradient_scale(mode: str, trees, model: Model, golds) -> np.ndarray | float:
    if isinstance(mode, (int, float)):
        return float(mode)
    if mode == "none":
        return 1.0
    if mode == "nodes":
        return 1.0 / sum(t.dataset.n for t in trees)
    if mode == "tree":
        return 1.0 / (len(trees) * np.mean([t.dataset.n for t in trees]))
    if mode == "layer":
        per_layer = np.zeros(model.max_depth)
        for t in trees:
            d = t.gold.depths()[1:]
            np.add.at(per_layer, np.minimum(d, model.max_depth) - 1, 1)
        return 1.0 / np.maximum(per_layer, 1.0)[:, None]
    raise ValueError(f"unknown gradient normalization {mode!r}")


def em_train(trees, cfg: TrainConfig, model: Model | None = None,
             caches: list[SimilarityCache] | None = None) -> tuple[Model, TrainLog]:
    """Stochastic EM: each iteration takes one ascent step on a sampled gradient.

    Each training tree keeps a persistent chain that the E-step resumes.
    """
    trees = list(trees)
    if not trees:
        raise ValueError("empty training set")
    if model is None:
        model, caches = prepare_model(trees, cfg)
    elif caches is None:
        caches = [SimilarityCache.build(t.dataset, model.proj_image_word, model.proj_word_word,
                                        model.top_k, model.visual) for t in trees]
    tables = [ChainTables.build(model, c) for c in caches]
    alphas = [gold_alpha(model, t.gold) for t in trees]
    golds = [gold_feature_sums(model, c, t.gold) for c, t in zip(caches, trees)]
    states = [Taxonomy.star(t.dataset.n).parent for t in trees]
    scale = _gradient_scale(cfg.normalize, trees, model, golds)
    w = model.weights.copy()
    tlog = TrainLog()
    best, best_it = -np.inf, 0
    for it in range(cfg.em_iterations):
        eta = cfg.learning_rate(it)
        grad = np.zeros_like(w)
        for k, (tab, tr) in enumerate(zip(tables, trees)):
            tab.set_weights(w)
            seed = cfg.seed * 1_000_003 + it * len(trees) + k
            _, sums, states[k], _ = tab.run(states[k], alphas[k], cfg.burn_in, cfg.samples,
                                            seed, collect_features=True)
            grad += golds[k] - sums / cfg.samples
        w = w + eta * scale * grad
        model.weights = w
        surrogate = sum(log_joint(model, c, t.gold, a) for c, t, a in zip(caches, trees, alphas))
        row = {"iteration": it, "eta": eta, "surrogate": surrogate}
        for l in range(w.shape[0]):
            row[f"grad_norm_l{l + 1}"] = float(np.linalg.norm(grad[l]))
        tlog.rows.append(row)
        if surrogate > best + 1e-6 * max(abs(best), 1.0):
            best, best_it = surrogate, it
        elif cfg.patience is not None and it - best_it >= cfg.patience:
            log.info("surrogate plateaued at iteration %d", it)
            break
    model.weights = w
    return model, tlog
