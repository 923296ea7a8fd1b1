import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from taxinduce.core import BINNED_BLOCKS, ROOT, Dataset, FeatureLayout, LabelItem
from taxinduce.embed_stats import fit_gaussian, global_variance, top_k_refit, vissim
from taxinduce.features import (N_EDGES, BinSpec, SimilarityCache, assemble, build_bins,
                                learn_projection, one_hot, projection_objective, static_indices,
                                surface_features)


# ---------------------------------------------------------------------------
# bins

def test_bins_of_one_to_nineteen():
    spec = build_bins(np.arange(1, 20))
    assert spec.edges[0] == pytest.approx(1 + 18 / 19)
    assert np.allclose(np.diff(spec.edges), 18 / 19)
    assert spec.index(0) == 0 and spec.index(100) == 18


def test_constant_values():
    spec = build_bins([2.5] * 30)
    assert np.all(np.diff(spec.edges) > 0)
    assert spec.index(2.5) == 0


def test_build_bins_errors():
    with pytest.raises(ValueError):
        build_bins(np.arange(5))
    with pytest.raises(ValueError):
        build_bins([np.nan] * 30)
    with pytest.raises(ValueError):
        BinSpec("x", np.zeros(N_EDGES))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=19, max_size=80), st.floats(-1e6, 1e6),
       st.floats(-1e6, 1e6), st.randoms(use_true_random=False))
def test_bins_monotone_and_permutation_invariant(vals, a, b, rnd):
    spec = build_bins(vals)
    lo, hi = min(a, b), max(a, b)
    assert spec.index(lo) <= spec.index(hi)
    shuffled = list(vals)
    rnd.shuffle(shuffled)
    other = build_bins(shuffled)
    assert np.array_equal(one_hot(spec, a), one_hot(other, a))


def test_one_hot_slots():
    spec = build_bins(np.arange(1, 20))
    assert np.argmax(one_hot(spec, None)) == 0
    assert np.argmax(one_hot(spec, float("nan"))) == 0
    assert np.argmax(one_hot(spec, -5)) == 1
    assert np.argmax(one_hot(spec, 50)) == 19
    assert one_hot(spec, 3.3).sum() == 1


# ---------------------------------------------------------------------------
# surface block

def test_surface_catshark():
    f = surface_features("catshark", "shark")
    assert f[2] == 1 and f[3] == 1
    assert f[4 + 5] == 1            # common suffix of 5
    assert f[12 + 6] == 1           # LCS ratio 5/8
    assert f[4:12].sum() == f[12:22].sum() == f[22:32].sum() == 1


def test_surface_identity_and_capitals():
    f = surface_features("hammerhead", "hammerhead")
    assert f[2] == f[3] == 1 and f[4 + 7] == 1 and f[12 + 9] == 1 and f[22 + 5] == 1
    g = surface_features("ray", "Seafish")
    assert g[2] == 0 and g[3] == 0 and g[1] == 1 and g[0] == 0 and g[4] == 1


def test_surface_normalization():
    assert surface_features("Tiger_Shark", "shark")[2] == 1
    assert surface_features("great-white shark", "white shark")[2] == 1
    assert not surface_features("a", None).any()


# ---------------------------------------------------------------------------
# projections

def test_projection_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4))
    fit = learn_projection(x, x.copy(), lam=0.0, tol=1e-14, max_iter=100_000)
    assert np.allclose(fit.matrix, np.eye(4), atol=1e-6)
    assert fit.objective < 1e-10


def test_projection_large_lambda_zero_and_monotone():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(40, 3))
    y = x @ rng.normal(size=(3, 2))
    lam_max = np.abs(2.0 / 40 * x.T @ y).max()
    assert np.all(learn_projection(x, y, lam=lam_max).matrix == 0.0)
    fit = learn_projection(x, y, lam=0.01)
    assert np.all(np.diff(fit.history) <= 1e-15 * np.abs(fit.history[:-1]))
    assert fit.objective == pytest.approx(projection_objective(fit.matrix, x, y, 0.01))


def test_projection_l1_norm_shrinks_with_lambda():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(60, 5))
    y = x @ rng.normal(size=(5, 5)) + 0.1 * rng.normal(size=(60, 5))
    norms = [np.abs(learn_projection(x, y, lam).matrix).sum() for lam in (1e-4, 1e-2, 1e-1, 1.0)]
    assert all(a >= b - 1e-9 for a, b in zip(norms, norms[1:]))


def test_projection_input_errors():
    with pytest.raises(ValueError):
        learn_projection(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        learn_projection(np.ones((3, 2)), np.ones((4, 2)))
    with pytest.raises(ValueError):
        learn_projection(np.full((3, 2), np.inf), np.ones((3, 2)))


# ---------------------------------------------------------------------------
# similarity cache and assembly

def _three_node(images=True):
    rng = np.random.default_rng(5)
    items = [LabelItem(1, "shark", rng.normal(size=2), rng.normal(size=(6, 3)) if images else None),
             LabelItem(2, "catshark", rng.normal(size=2), rng.normal(size=(6, 3))),
             LabelItem(3, "dogshark", rng.normal(size=2), rng.normal(size=(6, 3)))]
    for it in items:
        if it.image_vecs.size == 0:
            it.image_vecs = np.zeros((0, 3))
    return Dataset(items, 3, 2)


def test_cache_values_match_direct_computation():
    ds = _three_node()
    rng = np.random.default_rng(6)
    from taxinduce.features import ProjectionMatrix
    phi = ProjectionMatrix(rng.normal(size=(2, 3)), 0, 0)
    phi_t = ProjectionMatrix(rng.normal(size=(2, 2)), 0, 0)
    cache = SimilarityCache.build(ds, phi, phi_t, top_k=None)
    fb = global_variance(np.vstack([it.image_vecs for it in ds.items]))
    gs = {it.id: fit_gaussian(it.image_vecs, fallback_var=fb) for it in ds.items}
    assert cache.vis[2, 3] == pytest.approx(vissim(gs[2], gs[3]))
    w2, w3 = ds.item(2).word_vec, ds.item(3).word_vec
    assert cache.cos[2, 3] == pytest.approx(w2 @ w3 / np.linalg.norm(w2) / np.linalg.norm(w3))
    # parent-child visual uses the parent's images refit around the child
    assert cache.pcv1[1, 2] == pytest.approx(vissim(top_k_refit(ds.item(1).image_vecs, gs[2], None,
                                                                fallback_var=fb), gs[2]))
    mean2 = ds.item(2).image_vecs.mean(axis=0)
    assert cache.pcv2[1, 2] == pytest.approx(-np.linalg.norm(phi.matrix @ mean2 - ds.item(1).word_vec))
    assert cache.pct1[1, 2] == pytest.approx(-np.linalg.norm(phi_t.matrix @ w2 - ds.item(1).word_vec))
    assert np.array_equal(cache.surf[1, 2], surface_features("catshark", "shark"))


def _model_for(cache, rng, layers=2):
    from taxinduce.core import Model
    from conftest import random_bins
    lay = FeatureLayout.default()
    return Model(lay, rng.normal(size=(layers, lay.width)), random_bins(cache, rng), None, None,
                 np.ones(layers + 1))


def test_assemble_root_parent():
    ds = _three_node()
    cache = SimilarityCache.build(ds)
    model = _model_for(cache, np.random.default_rng(0))
    f = assemble(cache, model, ROOT, 2, [1, 3])
    lay = model.layout
    for b in BINNED_BLOCKS:
        assert f[lay[b].offset] == 1 and f[lay[b].slice].sum() == 1
    assert f[lay["SURF"].slice].sum() == 0
    assert f[lay.bias] == 1


def test_assemble_child_without_images():
    ds = _three_node(images=False)
    cache = SimilarityCache.build(ds)
    model = _model_for(cache, np.random.default_rng(0))
    f = assemble(cache, model, 2, 1, [3])
    for b in ("S-V1", "PC-V1", "PC-V2"):
        assert f[model.layout[b].offset] == 1


def test_assemble_full_modality_with_one_sibling():
    ds = _three_node()
    from taxinduce.features import ProjectionMatrix
    phi = ProjectionMatrix(np.ones((2, 3)), 0, 0)
    cache = SimilarityCache.build(ds, phi, ProjectionMatrix(np.eye(2), 0, 0))
    model = _model_for(cache, np.random.default_rng(0))
    f = assemble(cache, model, 1, 2, [3])
    lay = model.layout
    for b in BINNED_BLOCKS:
        blk = f[lay[b].slice]
        assert blk.sum() == 1 and blk[0] == 0
    assert f[lay.bias] == 0
    binned = sum(f[lay[b].slice].sum() for b in BINNED_BLOCKS)
    assert binned == 5
    assert f.sum() == 5 + cache.surf[1, 2].sum()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_assemble_block_invariants(n, seed):
    model, cache, _ = random_instance(n, seed)
    rng = np.random.default_rng(seed)
    lay = model.layout
    for _ in range(10):
        child = int(rng.integers(1, n + 1))
        parent = int(rng.choice([m for m in range(n + 1) if m != child]))
        sibs = [s for s in range(1, n + 1) if s not in (child, parent) and rng.random() < 0.5]
        f = assemble(cache, model, parent, child, sibs)
        assert f.shape == (lay.width,)
        assert set(np.unique(f)) <= {0.0, 1.0}
        for b in BINNED_BLOCKS:
            assert f[lay[b].slice].sum() == 1
        surf = f[lay["SURF"].slice]
        if parent != ROOT:
            assert surf[4:12].sum() == surf[12:22].sum() == surf[22:32].sum() == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_static_indices_match_assemble(n, seed):
    """The sampler's compact table reproduces the non-sibling part of assemble."""
    model, cache, _ = random_instance(n, seed)
    idx = static_indices(cache, model)
    lay = model.layout
    sib = np.r_[lay["S-V1"].slice.start:lay["S-V1"].slice.stop, lay["S-T1"].slice.start:lay["S-T1"].slice.stop]
    for p in range(n + 1):
        for c in range(1, n + 1):
            if p == c:
                continue
            f = assemble(cache, model, p, c, [])
            f[sib] = 0
            g = np.zeros(lay.width)
            g[[k for k in idx[p, c] if k >= 0]] = 1
            assert np.array_equal(f, g)


def test_visual_off_makes_visual_missing():
    ds = _three_node()
    cache = SimilarityCache.build(ds, visual=False)
    assert not cache.has_img.any()
    assert np.all(np.isnan(cache.vis)) and np.all(np.isnan(cache.pcv1))
