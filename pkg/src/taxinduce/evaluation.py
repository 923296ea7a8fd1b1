"""Ancestor-F1 scoring and the completion / construction protocols."""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from .core import ROOT, Dataset, Taxonomy
from .features import SimilarityCache
from .inference import ChainTables, MarginalTable, SamplerConfig, mst_decode, run_chain
from .training import TrainConfig, TrainingTree, em_train, prepare_model


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    predicted: int
    gold: int
    correct: int
    task: str = ""
    height: int = 0

    def as_row(self) -> dict:
        return asdict(self)

    def __str__(self):
        return (f"{self.task or 'eval'} h={self.height}: P={self.precision:.3f} "
                f"R={self.recall:.3f} F1={self.f1:.3f} "
                f"({self.correct}/{self.predicted} predicted, {self.gold} gold)")


def ancestor_pairs(t: Taxonomy) -> set[tuple[int, int]]:
    """All (descendant, ancestor) pairs, the pseudo-root excluded."""
    out = set()
    for n in range(1, t.n + 1):
        a = int(t.parent[n])
        while a != ROOT:
            out.add((n, a))
            a = int(t.parent[a])
    return out


def score_pairs(pred: set, gold: set, identical: bool, task: str = "", height: int = 0) -> EvalReport:
    hit = len(pred & gold)
    if not pred and not gold:
        v = 1.0 if identical else 0.0
        return EvalReport(v, v, v, 0, 0, 0, task, height)
    p = hit / len(pred) if pred else 0.0
    r = hit / len(gold) if gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return EvalReport(p, r, f1, len(pred), len(gold), hit, task, height)


def ancestor_f1(pred: Taxonomy, gold: Taxonomy, task: str = "", restrict=None) -> EvalReport:
    """Precision/recall over transitive is-a pairs.

    ``restrict`` limits scoring to pairs touching at least one of the given nodes.
    """
    if pred.n != gold.n:
        raise ValueError(f"node-set mismatch: prediction has {pred.n} nodes, gold {gold.n}")
    pp, gp = ancestor_pairs(pred), ancestor_pairs(gold)
    if restrict is not None:
        keep = set(restrict)
        pp = {x for x in pp if x[0] in keep or x[1] in keep}
        gp = {x for x in gp if x[0] in keep or x[1] in keep}
    return score_pairs(pp, gp, pred == gold, task, gold.height())


def bfs_subtree(t: Taxonomy, ds: Dataset, root: int, h: int):
    """Nodes within ``h`` levels of ``root`` (root counts as level 1), densely re-indexed.

    Returns (sub-dataset, sub-taxonomy, original ids in new-id order).
    """
    if not 1 <= root <= t.n:
        raise ValueError(f"root {root} not in taxonomy")
    if h < 1:
        raise ValueError("h must be >= 1")
    kids = t.children()
    order = [root]
    level = {root: 1}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        if level[u] == h:
            continue
        for c in kids[u]:
            level[c] = level[u] + 1
            order.append(c)
            queue.append(c)
    new = {old: k for k, old in enumerate(order, start=1)}
    parent = [-1] + [new.get(int(t.parent[old]), ROOT) if old != root else ROOT for old in order]
    return ds.subset(order), Taxonomy(parent), order


def train_model(trees, cfg: TrainConfig):
    model, caches = prepare_model(trees, cfg)
    model, _ = em_train(trees, cfg, model, caches)
    return model


def construct(model, ds: Dataset, scfg: SamplerConfig) -> tuple[Taxonomy, MarginalTable]:
    cache = SimilarityCache.build(ds, model.proj_image_word, model.proj_word_word,
                                  model.top_k, model.visual)
    marg = run_chain(model, cache, scfg)
    return mst_decode(marg), marg


def run_construction(train_trees, test_items: Dataset, test_gold: Taxonomy, cfg: TrainConfig,
                     scfg: SamplerConfig) -> tuple[EvalReport, Taxonomy]:
    """Fit on ``train_trees`` only, build a taxonomy over ``test_items`` from a star start."""
    model = train_model(train_trees, cfg)
    pred, _ = construct(model, test_items, scfg)
    return ancestor_f1(pred, test_gold, task="construction"), pred


def leave_one_out(trees, cfg: TrainConfig, scfg: SamplerConfig) -> list[EvalReport]:
    reports = []
    for k in range(len(trees)):
        train = [t for j, t in enumerate(trees) if j != k]
        rep, _ = run_construction(train, trees[k].dataset, trees[k].gold, cfg, scfg)
        reports.append(rep)
    return reports


def split_completion(gold: Taxonomy, test_frac: float, seed: int):
    """Random test nodes plus the training view of the remaining tree.

    Retained nodes whose parent was removed move up to the nearest retained ancestor.
    Returns (test ids, retained ids, training-view parent array over full ids).
    """
    rng = np.random.default_rng(seed)
    pool = [n for n in range(1, gold.n + 1) if gold.parent[n] != ROOT]
    k = int(round(test_frac * len(pool)))
    test = sorted(int(x) for x in rng.choice(pool, size=k, replace=False)) if k else []
    tset = set(test)
    retained = [n for n in range(1, gold.n + 1) if n not in tset]
    view = np.full(gold.n + 1, -1, dtype=np.int64)
    for n in retained:
        a = int(gold.parent[n])
        while a != ROOT and a in tset:
            a = int(gold.parent[a])
        view[n] = a
    return test, retained, view


def run_completion(ds: Dataset, gold: Taxonomy, cfg: TrainConfig, scfg: SamplerConfig,
                   split_seed: int = 0, test_frac: float = 0.3) -> tuple[EvalReport, Taxonomy]:
    """Hold out nodes, train on the rest, re-insert the held-out nodes by joint Gibbs sampling.

    Gold edges among retained nodes stay frozen. Held-out nodes and retained nodes orphaned
    by the split are resampled jointly.
    """
    if gold.n < 10:
        raise ValueError("completion needs a gold tree with at least 10 nodes")
    if test_frac == 0:
        return ancestor_f1(gold, gold, task="completion"), gold.copy()
    test, retained, view = split_completion(gold, test_frac, split_seed)
    if not test:
        raise ValueError("degenerate split: no test nodes")
    new = {old: k for k, old in enumerate(retained, start=1)}
    train_parent = [-1] + [new[int(view[o])] if view[o] != ROOT else ROOT for o in retained]
    train_tree = TrainingTree(ds.subset(retained), Taxonomy(train_parent))
    model = train_model([train_tree], cfg)

    cache = SimilarityCache.build(ds, model.proj_image_word, model.proj_word_word,
                                  model.top_k, model.visual)
    init = view.copy()
    init[test] = ROOT
    init[0] = -1
    free = np.zeros(gold.n + 1, dtype=bool)
    free[test] = True
    # a retained node whose parent was held out only sits under its split-time stand-in
    tset = set(test)
    free[[n for n in retained if int(gold.parent[n]) in tset]] = True
    depths = Taxonomy(init).depths()
    known = [None] + [None if free[n] else int(depths[n]) for n in range(1, gold.n + 1)]
    alpha = model.alpha_for(gold.n, known)
    tables = ChainTables.build(model, cache)
    counts, _, _, _ = tables.run(init, alpha, scfg.burn_in, scfg.samples, scfg.seed, free=free,
                                 soft=scfg.estimator == "conditional")
    pred = mst_decode(MarginalTable.from_counts(counts, scfg.samples, scfg.burn_in))
    return ancestor_f1(pred, gold, task="completion", restrict=test), pred
