"""Evaluation statistics: finite-support KL, Gaussian-kernel MMD with the
median bandwidth heuristic and optional sample weights, and log-MSE."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist

DIST_SUM_TOL = 1e-10


def validate_distribution(vec, atol: float = DIST_SUM_TOL) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.ndim != 1:
        raise ValueError("distribution must be a vector")
    if np.any(v < 0):
        raise ValueError("distribution has negative entries")
    if abs(v.sum() - 1.0) > atol:
        raise ValueError(f"distribution sums to {v.sum()!r}, not 1")
    return v


def kl_divergence(truth, est, floor: float = 1e-12, reverse: bool = False) -> float:
    """KL(truth || est) on a shared finite support.

    The estimate is floored so empty bins of a sampled estimate stay finite;
    ``reverse=True`` swaps the arguments.
    """
    p = validate_distribution(truth)
    q = validate_distribution(est)
    if p.size != q.size:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    if reverse:
        p, q = q, p
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], floor))))


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("samples must be nonempty point lists")
    return a


def median_heuristic_bandwidth(pooled: np.ndarray) -> float:
    """Median pairwise distance over the deduplicated pooled sample.

    Deduplication drops zero distances from exact duplicates and makes the
    bandwidth invariant to copying points while splitting their weights.
    Degenerate pools (a single distinct point) fall back to bandwidth 1.
    """
    uniq = np.unique(_as_matrix(pooled), axis=0)
    if uniq.shape[0] < 2:
        return 1.0
    d = cdist(uniq, uniq)
    med = float(np.median(d[np.triu_indices(uniq.shape[0], k=1)]))
    return med if med > 0 else 1.0


def mmd_gaussian(x, y, x_weights=None) -> float:
    """Gaussian-kernel MMD between two samples, optionally weighting the first.

    Uses the biased V-statistic so identical samples give exactly zero and
    the weighted and unweighted forms share one formula; the reported value
    is the square root of the statistic clamped at zero.  The kernel width
    is the median heuristic over the pooled sample.
    """
    xa, ya = _as_matrix(x), _as_matrix(y)
    if xa.shape[1] != ya.shape[1]:
        raise ValueError("samples have different dimensions")
    if x_weights is None:
        wx = np.full(xa.shape[0], 1.0 / xa.shape[0])
    else:
        wx = np.asarray(x_weights, dtype=float)
        if wx.shape != (xa.shape[0],):
            raise ValueError("one weight per point of the first sample required")
        if np.any(wx < 0):
            raise ValueError("weights must be nonnegative")
        if abs(wx.sum() - 1.0) > 1e-8:
            raise ValueError(f"weights sum to {wx.sum()!r}, not 1")
    h = median_heuristic_bandwidth(np.concatenate([xa, ya]))
    c = -0.5 / (h * h)
    kxx = np.exp(c * cdist(xa, xa, "sqeuclidean"))
    kyy = np.exp(c * cdist(ya, ya, "sqeuclidean"))
    kxy = np.exp(c * cdist(xa, ya, "sqeuclidean"))
    ny = ya.shape[0]
    stat = float(wx @ kxx @ wx) - 2.0 * float(wx @ kxy.sum(axis=1)) / ny + float(kyy.sum()) / (ny * ny)
    return math.sqrt(max(stat, 0.0))


def log_mse(estimates, truth: float) -> float:
    """Natural log of the mean squared error of repeated estimates."""
    e = np.asarray(estimates, dtype=float)
    if e.size == 0:
        raise ValueError("need at least one estimate")
    return float(np.log(np.mean((e - truth) ** 2)))
