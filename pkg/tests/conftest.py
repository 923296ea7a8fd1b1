import sys
from pathlib import Path

import numpy as np
import pytest

from taxinduce.core import Dataset, FeatureLayout, LabelItem, Model
from taxinduce.features import N_EDGES, BinSpec, ProjectionMatrix, SimilarityCache, build_bins
from taxinduce.core import BINNED_BLOCKS

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"

SYL = ["ka", "lo", "mi", "ru", "te", "za"]


def random_dataset(n, rng, img_dim=3, word_dim=3, p_no_word=0.2, p_no_img=0.2):
    """Small label set with some missing modalities, sparse image sets and suffix names."""
    names, items = [], []
    for k in range(1, n + 1):
        if names and rng.random() < 0.4:
            name = SYL[rng.integers(len(SYL))] + names[rng.integers(len(names))]
        else:
            name = "".join(SYL[i] for i in rng.integers(len(SYL), size=3))
        while name in names:
            name = SYL[rng.integers(len(SYL))] + name
        names.append(name)
        word = None if rng.random() < p_no_word else rng.normal(size=word_dim)
        if rng.random() < p_no_img:
            imgs = np.zeros((0, img_dim))
        else:
            # a few sets stay below the minimum count and use the fallback variance
            imgs = rng.normal(size=img_dim) + rng.normal(size=(int(rng.integers(2, 9)), img_dim))
        items.append(LabelItem(k, name, word, imgs))
    return Dataset(items, img_dim, word_dim)


def random_bins(cache, rng):
    """Quantile bins over the instance's own values padded with random draws."""
    bins = {}
    for block in BINNED_BLOCKS:
        vals = cache.training_values(block)
        vals = vals[np.isfinite(vals)]
        spread = vals.std() + 1.0 if len(vals) else 1.0
        centre = vals.mean() if len(vals) else 0.0
        pad = centre + spread * rng.normal(size=N_EDGES + 1)
        bins[block] = build_bins(np.concatenate([vals, pad]), block)
    return bins


def random_instance(n, seed, layers=None, scale=0.6, top_k=None):
    """(model, cache, alpha) with random weights, projections, bins and pseudo-counts."""
    rng = np.random.default_rng(seed)
    ds = random_dataset(n, rng)
    phi = ProjectionMatrix(rng.normal(size=(ds.word_dim, ds.image_dim)) * 0.5, 0.0, 0.0)
    phi_t = ProjectionMatrix(rng.normal(size=(ds.word_dim, ds.word_dim)) * 0.5, 0.0, 0.0)
    cache = SimilarityCache.build(ds, phi, phi_t, top_k)
    layout = FeatureLayout.default()
    layers = layers or int(rng.integers(1, 5))
    weights = rng.normal(size=(layers, layout.width)) * scale
    model = Model(layout, weights, random_bins(cache, rng), phi, phi_t,
                  rng.uniform(0.5, 3.0, size=layers + 1), float(rng.uniform(0.5, 3.0)), top_k)
    alpha = rng.uniform(0.3, 3.0, size=n + 1)
    return model, cache, alpha


@pytest.fixture
def instance():
    return random_instance


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

ACCEPTANCE: list[str] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}" + (f": {detail}" if detail else "")
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
