"""Pure numpy versions of the compiled kernels (same arithmetic order)."""

from __future__ import annotations

import numpy as np


def wilcoxon_counts(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per row, #{(i, j): x_i <= y_j} for row-sorted x and y."""
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y need the same number of rows")
    out = np.empty(x.shape[0], dtype=np.int64)
    for r in range(x.shape[0]):
        out[r] = np.searchsorted(x[r], y[r], side="right").sum()
    return out


def censored_sup(z, d, ref, ref_tau: float, tau: float, product: bool) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    d = np.asarray(d)
    ref = np.asarray(ref, dtype=float)
    n = z.shape[1]
    risk = (n - np.arange(n)).astype(float)
    if product:
        cur = 1.0 - np.cumprod(np.where(d != 0, 1.0 - 1.0 / risk, 1.0), axis=1)
    else:
        cur = np.cumsum(np.where(d != 0, 1.0 / risk, 0.0), axis=1)
    prev = np.concatenate([np.zeros((z.shape[0], 1)), cur[:, :-1]], axis=1)
    inside = z <= tau
    # rows are sorted, so the running estimate at tau is the last one inside
    dev = np.maximum(np.abs(prev - ref), np.abs(cur - ref))
    best = np.where(inside, dev, 0.0).max(axis=1, initial=0.0)
    last = inside.sum(axis=1) - 1
    at_tau = np.where(last >= 0, cur[np.arange(z.shape[0]), np.maximum(last, 0)], 0.0)
    return np.maximum(best, np.abs(at_tau - ref_tau))
