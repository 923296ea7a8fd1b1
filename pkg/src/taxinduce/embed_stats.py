"""Diagonal Gaussian summaries of image-embedding sets and log-space visual similarity."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

VAR_FLOOR = 1e-6
MIN_IMAGES = 5
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    var: np.ndarray
    count: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _as_matrix(vecs) -> np.ndarray:
    x = np.asarray(vecs, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if x.size else x.reshape(0, 0)
    if x.ndim != 2:
        raise ValueError("expected a sequence of equal-length vectors")
    return x


def global_variance(all_vecs, floor: float = VAR_FLOOR) -> np.ndarray:
    """Per-dimension population variance of every image vector in a collection."""
    x = _as_matrix(all_vecs)
    if len(x) == 0:
        raise ValueError("no vectors to estimate a fallback variance from")
    return np.maximum(x.var(axis=0), floor)


def fit_gaussian(vecs, floor: float = VAR_FLOOR, fallback_var=None,
                 min_count: int = MIN_IMAGES) -> GaussianSummary:
    """Mean and diagonal variance of ``vecs``.

    With fewer than ``min_count`` vectors only the mean is estimated and the
    variance is taken from ``fallback_var`` (unit variance when not given).
    """
    try:
        x = _as_matrix(vecs)
    except ValueError as exc:
        raise ValueError(f"inconsistent vector dimensions: {exc}") from None
    if len(x) == 0:
        raise ValueError("cannot fit a Gaussian to an empty set")
    mean = x.mean(axis=0)
    if len(x) >= min_count:
        var = np.maximum(x.var(axis=0), floor)
    else:
        var = np.ones_like(mean) if fallback_var is None else np.asarray(fallback_var, dtype=float)
        if var.shape != mean.shape:
            raise ValueError("fallback variance has the wrong dimension")
        var = np.maximum(var, floor)
    return GaussianSummary(mean, var, len(x))


def log_density(g: GaussianSummary, v) -> float | np.ndarray:
    """log N(v; mean, diag(var)); ``v`` may be one vector or a stack of row vectors."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: {v.shape[-1]} vs {g.dim}")
    d = v - g.mean
    out = -0.5 * (np.sum(np.log(g.var)) + g.dim * LOG_2PI + np.sum(d * d / g.var, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def vissim(x: GaussianSummary, y: GaussianSummary) -> float:
    """Log of the mean of each category's density at the other's mean."""
    return float(np.logaddexp(log_density(x, y.mean), log_density(y, x.mean)) - math.log(2))


def sibling_vissim(n: GaussianSummary, sibs: Sequence[GaussianSummary]) -> float:
    if not sibs:
        raise ValueError("sibling set is empty")
    s = np.array([vissim(n, m) for m in sibs])
    return float(logsumexp(s) - math.log(len(s)))


def top_k_refit(parent_vecs, child: GaussianSummary, k: int | None,
                floor: float = VAR_FLOOR, fallback_var=None,
                min_count: int = MIN_IMAGES) -> GaussianSummary:
    """Refit the parent's Gaussian on its ``k`` images most probable under ``child``.

    ``k=None`` means all images.
    """
    x = _as_matrix(parent_vecs)
    if k is None or k >= len(x):
        return fit_gaussian(x, floor, fallback_var, min_count)
    if k < 1:
        raise ValueError("k must be >= 1")
    order = np.argsort(-log_density(child, x), kind="stable")
    return fit_gaussian(x[order[:k]], floor, fallback_var, min_count)
