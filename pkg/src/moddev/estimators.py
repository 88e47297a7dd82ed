"""Point and function estimators built from samples.

All estimators return right-continuous step functions or scalars and use
the ``inf{x : G(x) >= p}`` convention for generalised inverses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import ModelError, NoRootInBox
from .samples import CensoredSample, PairedSample, Sample

__all__ = [
    "StepFunction",
    "ScoreFunction",
    "PsiSpec",
    "ecdf",
    "empirical_quantile",
    "quantile_index",
    "wilcoxon_count",
    "wilcoxon_statistic",
    "nelson_aalen",
    "kaplan_meier",
    "empirical_copula",
    "l_weights",
    "l_statistic",
    "m_estimate",
    "bracketed_root",
]

# 8-point Gauss-Legendre rule on [-1, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function.

    ``values[k]`` is the value on ``[jump_points[k], jump_points[k+1])``;
    before the first jump the function equals ``initial_value``.  Values are
    stored directly rather than as cumulated jumps so that evaluation is
    exact to the precision the estimator produced them.
    """

    jump_points: np.ndarray
    values: np.ndarray
    initial_value: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.jump_points, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if t.shape != v.shape:
            raise ModelError("jump_points and values differ in length")
        if np.any(np.diff(t) <= 0):
            raise ModelError("jump points must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "jump_points", t)
        object.__setattr__(self, "values", v)

    @property
    def jump_sizes(self) -> np.ndarray:
        return np.diff(np.concatenate([[self.initial_value], self.values]))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_points, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 0.0,
                       self.initial_value)
        return out[()] if out.ndim == 0 else out

    def left_limit(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_points, t, side="left") - 1
        out = np.where(idx >= 0, self.values[np.maximum(idx, 0)] if self.values.size else 0.0,
                       self.initial_value)
        return out[()] if out.ndim == 0 else out

    def to_csv(self, path_or_file) -> None:
        """Write ``t,value`` rows at the jump points (header included)."""
        def _write(fh):
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.jump_points, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

        if hasattr(path_or_file, "write"):
            _write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                _write(fh)


# ---------------------------------------------------------------------------
# score functions for L-statistics


@dataclass(frozen=True)
class ScoreFunction:
    """Score J on (0, 1), optionally trimmed to ``[t1, t2]``.

    When ``pieces`` is given, J is the piecewise polynomial
    ``sum(c_k u**k)`` on each ``(lo, hi, coeffs)`` piece and every integral
    is exact; otherwise ``func`` is integrated with 8-point Gauss-Legendre.
    """

    func: Callable | None = None
    trim: tuple | None = None
    lipschitz: float | None = None
    pieces: tuple | None = field(default=None, repr=False)
    label: str = "custom"

    def __post_init__(self):
        if self.func is None and self.pieces is None:
            raise ModelError("score needs a callable or polynomial pieces")
        if self.trim is not None:
            t1, t2 = self.trim
            if not (0.0 <= t1 < t2 <= 1.0):
                raise ModelError("trim bounds must satisfy 0 <= t1 < t2 <= 1")

    # constructors

    @classmethod
    def constant(cls, value: float = 1.0) -> "ScoreFunction":
        return cls(pieces=((0.0, 1.0, (float(value),)),), lipschitz=0.0, label=f"constant({value})")

    @classmethod
    def indicator(cls, lo: float, hi: float, value: float = 1.0) -> "ScoreFunction":
        return cls(pieces=((float(lo), float(hi), (float(value),)),), trim=(float(lo), float(hi)),
                   label=f"indicator({lo},{hi},{value})")

    @classmethod
    def trimmed_mean(cls, lo: float, hi: float) -> "ScoreFunction":
        """Indicator of [lo, hi] scaled to integrate to one."""
        return cls.indicator(lo, hi, 1.0 / (hi - lo))

    @classmethod
    def polynomial(cls, coeffs, lo: float = 0.0, hi: float = 1.0) -> "ScoreFunction":
        coeffs = tuple(float(c) for c in coeffs)
        deriv = P.polyder(coeffs) if len(coeffs) > 1 else [0.0]
        grid = np.linspace(lo, hi, 1001)
        lip = float(np.max(np.abs(P.polyval(grid, deriv))))
        trim = None if (lo, hi) == (0.0, 1.0) else (lo, hi)
        return cls(pieces=((lo, hi, coeffs),), trim=trim,
                   lipschitz=lip if trim is None else None, label=f"polynomial{coeffs}")

    @classmethod
    def from_callable(cls, func, trim=None, lipschitz=None, label="custom") -> "ScoreFunction":
        return cls(func=func, trim=trim, lipschitz=lipschitz, label=label)

    # evaluation

    def breakpoints(self) -> np.ndarray:
        pts = {0.0, 1.0}
        if self.pieces is not None:
            for lo, hi, _ in self.pieces:
                pts.update((lo, hi))
        if self.trim is not None:
            pts.update(self.trim)
        return np.array(sorted(pts))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.pieces is not None:
            out = np.zeros_like(u)
            for lo, hi, coeffs in self.pieces:
                mask = (u >= lo) & (u <= hi)
                out = np.where(mask, P.polyval(u, coeffs), out)
        else:
            out = np.asarray(self.func(u), dtype=float) * np.ones_like(u)
        if self.trim is not None:
            out = np.where((u >= self.trim[0]) & (u <= self.trim[1]), out, 0.0)
        return out[()] if out.ndim == 0 else out

    def antiderivative(self, u):
        """K(u) = integral of J over [0, u]."""
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if self.pieces is not None:
            out = np.zeros_like(u)
            for lo, hi, coeffs in self.pieces:
                a, b = lo, hi
                if self.trim is not None:
                    a, b = max(a, self.trim[0]), min(b, self.trim[1])
                if b <= a:
                    continue
                q = P.polyint(coeffs)
                out = out + P.polyval(np.clip(u, a, b), q) - P.polyval(a, q)
            return out[()] if out.ndim == 0 else out
        return self._gl_integral(np.zeros_like(u), u, panels=32)

    def integral(self, a, b):
        return self.antiderivative(b) - self.antiderivative(a)

    def cell_integrals(self, n: int) -> np.ndarray:
        """Integrals of J over ((i-1)/n, i/n] for i = 1..n."""
        edges = np.arange(n + 1) / n
        if self.pieces is not None:
            return np.diff(self.antiderivative(edges))
        return self._gl_integral(edges[:-1], edges[1:], panels=1)

    def _gl_integral(self, a, b, panels: int):
        # split at the breakpoints so that GL nodes never straddle a jump of J
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        total = np.zeros(np.broadcast(a, b).shape)
        cuts = self.breakpoints()
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            aa = np.clip(a, lo, hi)
            bb = np.clip(b, lo, hi)
            width = (bb - aa) / panels
            for k in range(panels):
                left = aa + k * width
                mid = left + 0.5 * width
                nodes = mid[..., None] + 0.5 * width[..., None] * _GL_X
                total = total + 0.5 * width * (self(nodes) @ _GL_W)
        return total[()] if total.ndim == 0 else total

    def check_lipschitz(self, points: int = 1000) -> bool:
        """Spot-check the declared Lipschitz constant on a uniform grid."""
        if self.lipschitz is None:
            return True
        u = np.linspace(0.0, 1.0, points + 1)
        slopes = np.abs(np.diff(self(u))) / np.diff(u)
        return bool(np.all(slopes <= self.lipschitz * (1 + 1e-9) + 1e-12))


@dataclass(frozen=True)
class PsiSpec:
    """Estimating function psi(x, theta) with search box [center - radius, center + radius].

    ``psi`` must broadcast over arrays of x and theta.  ``dpsi`` (the
    theta-derivative of E psi) is optional and only used by rate plumbing.
    """

    psi: Callable
    center: float
    radius: float
    dim: int = 1
    label: str = "custom"

    def __post_init__(self):
        if self.dim != 1:
            raise ModelError("only one-dimensional M-estimation is supported")
        if not self.radius > 0:
            raise ModelError("search radius must be positive")

    @classmethod
    def location(cls, center: float = 0.0, radius: float = 5.0) -> "PsiSpec":
        return cls(_psi_location, center, radius, label="location")

    @classmethod
    def sign(cls, center: float = 0.0, radius: float = 5.0) -> "PsiSpec":
        return cls(_psi_sign, center, radius, label="sign")

    @classmethod
    def huber(cls, k: float = 1.345, center: float = 0.0, radius: float = 5.0) -> "PsiSpec":
        return cls(_Huber(float(k)), center, radius, label=f"huber({k})")

    def check_continuity(self, xs, thetas=None, step: float = 1e-7, tol: float = 1e-4) -> bool:
        """Finite-perturbation check that psi(x, .) has no jumps at test points."""
        xs = np.asarray(xs, dtype=float)
        if thetas is None:
            thetas = np.linspace(self.center - self.radius, self.center + self.radius, 17)
        for th in np.asarray(thetas, dtype=float):
            gap = np.abs(self.psi(xs, th + step) - self.psi(xs, th - step))
            if np.any(gap > tol):
                return False
        return True

    def mean_psi(self, values: np.ndarray, theta):
        """Psi_n(theta) = mean of psi(X_i, theta); theta may be a vector of trial points."""
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            return float(np.mean(self.psi(values, theta)))
        return np.mean(self.psi(values[None, :], theta[:, None]), axis=1)


def _psi_location(x, theta):
    return x - theta


def _psi_sign(x, theta):
    return np.sign(x - theta)


@dataclass(frozen=True)
class _Huber:
    k: float

    def __call__(self, x, theta):
        return np.clip(x - theta, -self.k, self.k)


# ---------------------------------------------------------------------------
# one-sample estimators


def ecdf(s: Sample) -> StepFunction:
    """Empirical distribution function; tied atoms produce a single jump."""
    if not isinstance(s, Sample):
        s = Sample(s)
    atoms, counts = np.unique(s.values, return_counts=True)
    return StepFunction(atoms, np.cumsum(counts) / s.n, 0.0)


def quantile_index(n: int, p: float) -> int:
    """Smallest k in 1..n with k/n >= p, i.e. the order statistic picked by the inf-inverse."""
    if not (0.0 < p <= 1.0):
        raise ModelError("quantile level must lie in (0, 1]")
    k = max(1, math.ceil(n * p))
    while k > 1 and (k - 1) / n >= p:
        k -= 1
    while k < n and k / n < p:
        k += 1
    return k


def empirical_quantile(s: Sample, p: float) -> float:
    """F_n^{-1}(p) = X_(ceil(np)) under the inf convention."""
    if not isinstance(s, Sample):
        s = Sample(s)
    return float(s.values[quantile_index(s.n, p) - 1])


def wilcoxon_count(x: Sample, y: Sample) -> int:
    """Number of pairs (i, j) with x_i <= y_j."""
    xs = x.values if isinstance(x, Sample) else Sample(x).values
    ys = y.values if isinstance(y, Sample) else Sample(y).values
    return int(np.searchsorted(xs, ys, side="right").sum())


def wilcoxon_statistic(x: Sample, y: Sample) -> float:
    """W = integral of F_m dG_n = #{x_i <= y_j} / (m n)."""
    x = x if isinstance(x, Sample) else Sample(x)
    y = y if isinstance(y, Sample) else Sample(y)
    return wilcoxon_count(x, y) / (x.n * y.n)


# ---------------------------------------------------------------------------
# censored data


def _event_table(c: CensoredSample):
    """Distinct times with deaths d, censorings m and at-risk counts Y = #{z_j >= t}."""
    order = np.argsort(c.times, kind="stable")
    z = c.times[order]
    d = c.events[order]
    times, first, counts = np.unique(z, return_index=True, return_counts=True)
    deaths = np.add.reduceat(d.astype(np.int64), first)
    at_risk = c.n - first
    return times, deaths, counts - deaths, at_risk


def nelson_aalen(c: CensoredSample) -> StepFunction:
    """Cumulative hazard estimate with jumps d(t)/Y(t) at uncensored times.

    At a tied time deaths precede censorings, so censorings at t stay in
    the risk set Y(t) = #{z_j >= t}.
    """
    times, deaths, _, at_risk = _event_table(c)
    keep = deaths > 0
    return StepFunction(times[keep], np.cumsum(deaths[keep] / at_risk[keep]), 0.0)


def kaplan_meier(c: CensoredSample) -> StepFunction:
    """Product-limit estimate of F from the Nelson-Aalen jumps.

    The survival product over (1 - d_j / Y_j) is regrouped as
    ``(Y_k - d_k)/n * prod_{j<k} (Y_j - d_j)/Y_{j+1}``; the factors are
    exactly one where nothing is censored, so without censoring the result
    coincides with the ECDF to rounding.
    """
    times, deaths, _, at_risk = _event_table(c)
    n = c.n
    survivors = (at_risk - deaths).astype(float)
    next_risk = np.append(at_risk[1:], 0).astype(float)
    ratio = np.ones_like(survivors)
    mid = slice(0, times.size - 1)
    ratio[mid] = survivors[mid] / next_risk[mid]
    carry = np.concatenate([[1.0], np.cumprod(ratio[:-1])])
    surv = survivors / n * carry
    keep = deaths > 0
    return StepFunction(times[keep], 1.0 - surv[keep], 0.0)


# ---------------------------------------------------------------------------
# bivariate


def empirical_copula(p: PairedSample, grid) -> np.ndarray:
    """C_n(u, v) = H_n(F_n^{-1}(u), G_n^{-1}(v)) at each (u, v) in ``grid``."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != 2:
        raise ModelError("grid must be a list of (u, v) pairs")
    if np.any((grid <= 0) | (grid > 1)):
        raise ModelError("copula grid points must lie in (0, 1]^2")
    n = p.n
    xs, ys = np.sort(p.x), np.sort(p.y)
    us, u_inv = np.unique(grid[:, 0], return_inverse=True)
    vs, v_inv = np.unique(grid[:, 1], return_inverse=True)
    tx = np.array([xs[quantile_index(n, u) - 1] for u in us])
    ty = np.array([ys[quantile_index(n, v) - 1] for v in vs])
    below_x = (p.x[:, None] <= tx[None, :]).astype(np.float64)
    below_y = (p.y[:, None] <= ty[None, :]).astype(np.float64)
    counts = below_x.T @ below_y
    return counts[u_inv, v_inv] / n


# ---------------------------------------------------------------------------
# L- and M-estimators


def l_weights(n: int, score: ScoreFunction) -> np.ndarray:
    """Weights on the order statistics: integrals of J over ((i-1)/n, i/n]."""
    return score.cell_integrals(n)


def l_statistic(s: Sample, score: ScoreFunction) -> float:
    """L_n = sum of X_(i) times the integral of J over ((i-1)/n, i/n]."""
    if not isinstance(s, Sample):
        s = Sample(s)
    return float(np.dot(s.values, l_weights(s.n, score)))


def bracketed_root(fun, lo, hi, flo=None, fhi=None, ftol=0.0, xtol=None, max_iter=200):
    """Vectorised bracketing root finder: bisection, then safeguarded secant.

    ``fun`` maps an array of trial points (one per bracket) to function
    values.  Every bracket must have a sign change.  Returns
    ``(root, converged_on_f)``; when the tolerance on |f| cannot be met (a
    jump through zero) the midpoint of the final bracket is returned.
    """
    a = np.array(lo, dtype=float, ndmin=1)
    b = np.array(hi, dtype=float, ndmin=1)
    fa = np.array(fun(a) if flo is None else flo, dtype=float, ndmin=1)
    fb = np.array(fun(b) if fhi is None else fhi, dtype=float, ndmin=1)
    ftol = np.broadcast_to(np.asarray(ftol, dtype=float), a.shape)
    if xtol is None:
        xtol = 4 * np.finfo(float).eps * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    root = np.full(a.shape, np.nan)
    hit = np.zeros(a.shape, dtype=bool)
    for arr, f in ((a, fa), (b, fb)):
        z = (np.abs(f) <= ftol) & np.isnan(root)
        root[z] = arr[z]
        hit |= z
    if np.any(np.isnan(root) & (np.sign(fa) * np.sign(fb) > 0)):
        raise NoRootInBox("bracket without sign change")
    width0 = np.abs(b - a)
    bisect_next = np.ones(a.shape, dtype=bool)
    for it in range(max_iter):
        active = np.isnan(root)
        if not active.any():
            break
        width = np.abs(b - a)
        done = active & (width <= xtol)
        root[done] = 0.5 * (a[done] + b[done])
        active &= ~done
        if not active.any():
            break
        # plain bisection until the bracket is 1e-6 of its initial width
        coarse = width > 1e-6 * width0
        with np.errstate(divide="ignore", invalid="ignore"):
            sec = b - fb * (b - a) / (fb - fa)
        mid = 0.5 * (a + b)
        inside = np.isfinite(sec) & (sec > np.minimum(a, b)) & (sec < np.maximum(a, b))
        trial = np.where(coarse | bisect_next | ~inside, mid, sec)
        ft = np.array(fun(np.where(active, trial, mid)), dtype=float, ndmin=1)
        z = active & (np.abs(ft) <= ftol)
        root[z] = trial[z]
        hit |= z
        active &= ~z
        left = active & (np.sign(ft) == np.sign(fa))
        right = active & ~left
        new_width = np.where(left, np.abs(b - trial), np.abs(trial - a))
        a = np.where(left, trial, a)
        fa = np.where(left, ft, fa)
        b = np.where(right, trial, b)
        fb = np.where(right, ft, fb)
        # a secant step that fails to halve the bracket is followed by a bisection
        bisect_next = ~coarse & ~bisect_next & (new_width > 0.5 * width)
    left_over = np.isnan(root)
    root[left_over] = 0.5 * (a[left_over] + b[left_over])
    return root, hit


def m_estimate(s: Sample, psi: PsiSpec, scan_points: int = 1000) -> float:
    """Root of Psi_n(theta) = mean psi(X_i, theta) inside the search box.

    The box is scanned on ``scan_points + 1`` points; the sign change
    nearest the box centre is refined by bisection and a secant polish to
    |Psi_n| <= 1e-10 (1 + |Psi_n(centre)|).  For a Psi_n that jumps through
    zero the midpoint of the collapsed bracket is returned.
    """
    if not isinstance(s, Sample):
        s = Sample(s)
    x = s.values
    lo, hi = psi.center - psi.radius, psi.center + psi.radius
    thetas = np.linspace(lo, hi, scan_points + 1)
    vals = psi.mean_psi(x, thetas)
    ftol = 1e-10 * (1.0 + abs(psi.mean_psi(x, psi.center)))
    near = np.flatnonzero(np.abs(vals) <= ftol)
    change = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    if near.size == 0 and change.size == 0:
        raise NoRootInBox(
            f"Psi_n has no sign change on [{lo}, {hi}]: the estimating equation has no root in the box"
        )
    candidates = []
    if near.size:
        k = near[np.argmin(np.abs(thetas[near] - psi.center))]
        candidates.append((abs(thetas[k] - psi.center), "zero", k))
    if change.size:
        k = change[np.argmin(np.abs(0.5 * (thetas[change] + thetas[change + 1]) - psi.center))]
        candidates.append((abs(0.5 * (thetas[k] + thetas[k + 1]) - psi.center), "bracket", k))
    _, how, k = min(candidates)
    if how == "zero":
        return float(thetas[k])

    def fun(t):
        return np.array([psi.mean_psi(x, float(v)) for v in np.atleast_1d(t)])

    root, _ = bracketed_root(fun, thetas[k], thetas[k + 1], vals[k], vals[k + 1], ftol=ftol)
    return float(root[0])
