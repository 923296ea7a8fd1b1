import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from oracles import (all_trees, brute_max_arborescence, enumerate_joint, exact_expected_features,
                     exact_marginals, n_rooted_trees)
from taxinduce.core import ROOT, Taxonomy, descendants
from taxinduce.inference import (ChainTables, MarginalTable, SamplerConfig, candidate_parents,
                                 edge_score, feature_sums, log_joint, max_arborescence, mst_decode,
                                 parent_logits, random_tree, run_chain, sample_parent)
from taxinduce.features import assemble
from taxinduce.training import expected_feature_sums


def softmax(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x[np.isfinite(x)].max())
    return e / e.sum()


def test_tree_counts_match_cayley():
    for n in range(1, 6):
        assert len(all_trees(n)) == n_rooted_trees(n)


# ---------------------------------------------------------------------------
# scoring

def test_edge_score_zero_weights_and_linearity():
    model, cache, _ = random_instance(4, 1)
    t = Taxonomy([-1, 0, 1, 1, 2])
    model.weights[:] = 0
    assert edge_score(model, cache, t, 1, 3) == 0.0
    f = assemble(cache, model, 1, 3, [2])
    j = int(np.flatnonzero(f)[0])
    layer = model.layer(2)
    model.weights[layer, j] = 0.75
    assert edge_score(model, cache, t, 1, 3) == 0.75


def test_edge_score_matches_manual_recomputation():
    model, cache, _ = random_instance(5, 2, layers=2)
    t = Taxonomy([-1, 0, 1, 1, 3, 3])
    for p, c in t.edges():
        sibs = [s for s in t.children()[p] if s != c]
        manual = model.weights[min(t.depth(c), 2) - 1] @ assemble(cache, model, p, c, sibs)
        assert edge_score(model, cache, t, p, c) == pytest.approx(manual, abs=1e-12)


def test_log_joint_zero_weights_only_gamma_terms():
    model, cache, _ = random_instance(3, 3)
    model.weights[:] = 0
    alpha = np.full(4, 1.5)
    for t in all_trees(3):
        want = sum(math.lgamma(q + 1.5) for q in t.child_counts())
        assert log_joint(model, cache, t, alpha) == pytest.approx(want, abs=1e-12)


def test_single_node_has_one_structure():
    model, cache, alpha = random_instance(1, 4)
    marg = run_chain(model, cache, SamplerConfig(5, 20), alpha)
    assert marg.probs.shape == (1, 2) and marg.p(1, 0) == 1.0


def test_log_joint_three_nodes_against_hand_products():
    """exp(log_joint) equals the product of Gamma factors and edge potentials."""
    model, cache, alpha = random_instance(3, 5, layers=3)
    for t in all_trees(3):
        kids = t.children()
        mass = math.prod(math.gamma(len(kids[m]) + alpha[m]) for m in range(4))
        for p, c in t.edges():
            f = assemble(cache, model, p, c, [s for s in kids[p] if s != c])
            mass *= math.exp(model.weights[model.layer(t.depth(c))] @ f)
        assert math.exp(log_joint(model, cache, t, alpha)) == pytest.approx(mass, rel=1e-10)


# ---------------------------------------------------------------------------
# conditionals: compiled kernel, local-factor reference and direct ratios agree

def _direct_conditional(model, cache, t, n, alpha):
    out = np.full(t.n + 1, -np.inf)
    for m in candidate_parents(t, n):
        u = t.copy()
        u.parent[n] = m
        out[m] = log_joint(model, cache, u, alpha)
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_three_routes_to_the_conditional(n, seed):
    model, cache, alpha = random_instance(n, seed)
    rng = np.random.default_rng(seed)
    t = random_tree(n, rng)
    tables = ChainTables.build(model, cache)
    for v in range(1, n + 1):
        ref = parent_logits(model, cache, t, v, alpha)
        direct = _direct_conditional(model, cache, t, v, alpha)
        fast = tables.logits(t.parent, v, alpha)
        allowed = np.isfinite(direct)
        assert np.array_equal(allowed, np.isfinite(ref)) and np.array_equal(allowed, np.isfinite(fast))
        assert np.allclose(softmax(ref), softmax(direct), rtol=1e-9, atol=1e-12)
        assert np.allclose(softmax(fast), softmax(direct), rtol=1e-9, atol=1e-12)


def test_hand_fixture_four_nodes():
    """Per-candidate probabilities equal the normalized ratio of full joints to 1e-12."""
    model, cache, alpha = random_instance(4, 77, layers=3)
    t = Taxonomy([-1, 0, 1, 1, 2])
    for v in (1, 2, 4):
        direct = softmax(_direct_conditional(model, cache, t, v, alpha))
        assert np.allclose(softmax(parent_logits(model, cache, t, v, alpha)), direct, atol=1e-12)


def test_candidate_set_excludes_self_and_descendants():
    t = Taxonomy([-1, 0, 1, 2, 2, 0])
    assert candidate_parents(t, 2) == [0, 1, 5]
    model, cache, alpha = random_instance(5, 8)
    logits = parent_logits(model, cache, t, 2, alpha)
    assert np.all(np.isneginf(logits[[2, 3, 4]]))
    rng = np.random.default_rng(0)
    for _ in range(200):
        u = t.copy()
        m = sample_parent(model, cache, u, 2, rng, alpha)
        assert m not in (2, 3, 4) and u.is_tree()


def test_symmetric_candidates_split_evenly():
    model, cache, _ = random_instance(3, 9, layers=1)
    model.weights[:] = 0
    alpha = np.ones(4)
    start = Taxonomy.star(3).parent
    free = np.array([False, False, False, True])
    draws = 100_000
    cfg = SamplerConfig(0, draws, 3, estimator="counts")
    m = run_chain(model, cache, cfg, alpha, free=free)
    p1, p2 = m.p(3, 1), m.p(3, 2)
    frac = p1 / (p1 + p2)
    k = (p1 + p2) * draws
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / k)
    # the Python reference draw agrees on a smaller budget
    rng = np.random.default_rng(1)
    hits = [sample_parent(model, cache, Taxonomy(start), 3, rng, alpha) for _ in range(3000)]
    ones, twos = hits.count(1), hits.count(2)
    assert abs(ones / (ones + twos) - 0.5) <= 3 * math.sqrt(0.25 / (ones + twos))


def test_sample_parent_rejects_root():
    model, cache, alpha = random_instance(2, 1)
    with pytest.raises(ValueError):
        sample_parent(model, cache, Taxonomy.star(2), 0, np.random.default_rng(0), alpha)


# ---------------------------------------------------------------------------
# chains

def test_run_chain_rows_normalized_and_deterministic():
    model, cache, alpha = random_instance(5, 10)
    cfg = SamplerConfig(20, 300, 4)
    a = run_chain(model, cache, cfg, alpha)
    b = run_chain(model, cache, cfg, alpha)
    assert np.allclose(a.probs.sum(axis=1), 1.0)
    assert np.array_equal(a.probs, b.probs)
    c = run_chain(model, cache, SamplerConfig(20, 300, 4, estimator="counts"), alpha)
    assert np.allclose(c.probs.sum(axis=1), 1.0)
    assert np.allclose(c.probs * 300, np.round(c.probs * 300), atol=1e-9)


def test_chain_matches_enumeration_small():
    model, cache, alpha = random_instance(4, 11, scale=0.3)
    trees, probs = enumerate_joint(model, cache, alpha)
    exact = exact_marginals(trees, probs, 4)
    for est in ("conditional", "counts"):
        m = run_chain(model, cache, SamplerConfig(500, 20_000, 2, estimator=est), alpha)
        assert 0.5 * np.abs(m.probs - exact).sum(axis=1).max() <= 0.02


def test_slowly_mixing_instance_converges_with_longer_chains():
    """A peaked, multimodal model: 5e4 sweeps are not enough, 5e5 are."""
    model, cache, alpha = random_instance(6, 1044, scale=0.6)
    trees, probs = enumerate_joint(model, cache, alpha)
    exact = exact_marginals(trees, probs, 6)
    m = run_chain(model, cache, SamplerConfig(1000, 500_000, 1), alpha)
    assert 0.5 * np.abs(m.probs - exact).sum(axis=1).max() <= 0.02


def test_expected_features_match_enumeration():
    model, cache, alpha = random_instance(4, 12, scale=0.3)
    trees, probs = enumerate_joint(model, cache, alpha)
    exact = exact_expected_features(model, cache, trees, probs)
    est, _ = expected_feature_sums(model, cache, 1000, 50_000, seed=3, alpha=alpha)
    assert np.abs(est - exact).max() <= 0.01
    again, _ = expected_feature_sums(model, cache, 1000, 50_000, seed=3, alpha=alpha)
    assert np.array_equal(est, again)


def test_expected_features_exchangeable_nodes():
    model, cache, _ = random_instance(3, 13)
    model.weights[:] = 0
    alpha = np.ones(4)
    tables = ChainTables.build(model, cache)
    counts, _, _, _ = tables.run(Taxonomy.star(3).parent, alpha, 100, 40_000, 5, soft=True)
    p = counts[1:] / counts[1:].sum(axis=1, keepdims=True)
    # with a flat model every node sits under the root equally often
    assert np.ptp(p[:, 0]) < 0.02


def test_feature_sums_layers_follow_depth():
    model, cache, _ = random_instance(3, 14, layers=4)
    chain = Taxonomy([-1, 0, 1, 2])
    sums = feature_sums(model, cache, chain)
    assert [int(s.sum() > 0) for s in sums] == [1, 1, 1, 0]
    two = Taxonomy([-1, 0, 0, 1])
    s2 = feature_sums(model, cache, two)
    block = model.layout["S-T1"].slice
    assert s2[0, block].sum() == 2
    one_edge = feature_sums(model, cache, Taxonomy([-1, 0, 1, 1]))
    assert np.array_equal(one_edge[0], assemble(cache, model, 0, 1, []))


# ---------------------------------------------------------------------------
# decoding

def test_marginal_table_merge():
    a = MarginalTable(np.array([[1.0, 0.0]]), 100)
    b = MarginalTable(np.array([[0.0, 1.0]]), 300)
    m = MarginalTable.merge([a, b])
    assert m.samples == 400 and np.allclose(m.probs, [[0.25, 0.75]])


def test_decode_concentrated_marginals():
    t = Taxonomy([-1, 0, 1, 1, 3])
    probs = np.zeros((4, 5))
    probs[np.arange(4), t.parent[1:]] = 1.0
    assert mst_decode(MarginalTable(probs, 1)) == t


def test_decode_breaks_two_cycle_like_brute_force():
    probs = np.array([[0.1, 0.0, 0.9, 0.0, 0.0],
                      [0.3, 0.7, 0.0, 0.0, 0.0],
                      [0.2, 0.5, 0.3, 0.0, 0.0],
                      [0.1, 0.2, 0.2, 0.5, 0.0]])
    got = mst_decode(MarginalTable(probs, 1))
    score = np.full((5, 5), -np.inf)
    score[:, 1:] = np.log(probs.T + 1e-12)
    np.fill_diagonal(score, -np.inf)
    _, winners = brute_max_arborescence(score)
    assert got.is_tree()
    assert list(got.parent[1:]) == winners[0][1:]
    # the argmax rows 1 -> 2 -> 1 form a cycle that must be broken
    assert not (got.parent[1] == 2 and got.parent[2] == 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_arborescence_is_valid_tree(n, seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(n + 1, n + 1))
    np.fill_diagonal(s, -np.inf)
    par = max_arborescence(s, ROOT)
    t = Taxonomy(par)
    assert t.is_tree()
    best, _ = brute_max_arborescence(s)
    assert sum(s[par[v], v] for v in range(1, n + 1)) == pytest.approx(best, abs=1e-12)


def test_arborescence_with_forbidden_edges():
    s = np.full((4, 4), -np.inf)
    s[0, 1], s[1, 2], s[2, 3], s[0, 3], s[3, 2] = 1.0, 5.0, 4.0, 0.5, 6.0
    par = max_arborescence(s)
    assert list(par[1:]) == [0, 1, 2]
