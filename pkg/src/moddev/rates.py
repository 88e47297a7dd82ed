"""Closed-form moderate-deviation rates and the variance functionals they need.

Every rate here is a quadratic form ``x**2 / (2 * variance)`` (or its
matrix analogue); the work is in computing the variance of each
statistic's Gaussian limit from the model by quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, linalg, optimize

from .distributions import DistributionSpec
from .errors import DegenerateRate, ModelError, QuadratureError
from .estimators import PsiSpec, ScoreFunction, bracketed_root

__all__ = [
    "CensoredModel",
    "CovKernel",
    "wilcoxon_rate",
    "wilcoxon_center",
    "model_variances",
    "sigma2_hazard",
    "sigma2_km",
    "km_cov_kernel",
    "haz_cov_kernel",
    "hazard_sup_rate",
    "km_sup_rate",
    "quantile_rate",
    "lstat_mean",
    "lstat_variance",
    "lstat_rate",
    "lambda21_integral",
    "mean_rate",
    "m_model_terms",
    "m_rate",
    "gaussian_finite_rate",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _quad(func, a, b, points=None, epsrel=1e-10, epsabs=1e-13, limit=200):
    """scipy.quad that raises QuadratureError instead of warning."""
    if a == b:
        return 0.0
    kwargs = {"epsrel": epsrel, "epsabs": epsabs, "limit": limit}
    if points is not None and math.isfinite(a) and math.isfinite(b):
        pts = [p for p in points if a < p < b]
        if pts:
            kwargs["points"] = pts
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(func, a, b, **kwargs)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc).splitlines()[0]) from None
    return val


def _quad_pieces(func, edges, **kw):
    """Integrate over consecutive (possibly infinite) edge pairs."""
    return sum(_quad(func, lo, hi, **kw) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo)


def _expect(dist: DistributionSpec, func: Callable, breakpoints=()) -> float:
    """E func(X) for X ~ dist."""
    if not dist.is_continuous:
        atoms, probs = dist.atom_table()
        return float(np.dot(np.asarray(func(atoms), dtype=float), probs))
    lo, hi = dist.support()
    edges = [lo] + sorted(b for b in breakpoints if lo < b < hi) + [hi]
    return _quad_pieces(lambda x: func(x) * dist.pdf(x), edges, epsrel=1e-11)


# ---------------------------------------------------------------------------
# two-sample Wilcoxon


def wilcoxon_rate(lam: float, var_fy: float, var_gx: float, x):
    """x**2 / (2 (lam Var F(Y) + (1 - lam) Var G(X)))."""
    if not 0.0 < lam < 1.0:
        raise ModelError("lambda must lie in (0, 1)")
    if var_fy < 0 or var_gx < 0:
        raise ModelError("variances must be non-negative")
    denom = lam * var_fy + (1.0 - lam) * var_gx
    if denom <= 0:
        raise DegenerateRate("lam Var F(Y) + (1 - lam) Var G(X) vanishes")
    return np.asarray(x, dtype=float) ** 2 / (2.0 * denom)


def _moments_of_cdf(cdf_dist: DistributionSpec, law: DistributionSpec) -> tuple[float, float]:
    """E F(Y) and E F(Y)^2 for Y ~ law, F = cdf_dist.cdf."""
    pts = []
    if not cdf_dist.is_continuous:
        pts = list(cdf_dist.atom_table()[0])
    else:
        pts = [v for v in cdf_dist.support() if math.isfinite(v)]
    m1 = _expect(law, lambda y: cdf_dist.cdf(y), pts)
    m2 = _expect(law, lambda y: cdf_dist.cdf(y) ** 2, pts)
    return m1, m2


def wilcoxon_center(F: DistributionSpec, G: DistributionSpec) -> float:
    """P(X <= Y) = integral of F dG."""
    return _moments_of_cdf(F, G)[0]


def model_variances(F: DistributionSpec, G: DistributionSpec, method: str = "quadrature",
                    seed: int = 0, size: int = 10**6) -> tuple[float, float]:
    """(Var F(Y), Var G(X)) for X ~ F, Y ~ G.

    ``method="mc"`` replaces quadrature by a seeded Monte Carlo average and
    is meant only as a cross-check.
    """
    if method == "quadrature":
        m1, m2 = _moments_of_cdf(F, G)
        k1, k2 = _moments_of_cdf(G, F)
        return max(m2 - m1 * m1, 0.0), max(k2 - k1 * k1, 0.0)
    if method == "mc":
        from .samples import rng_for

        rng = rng_for(seed, 7)
        x = F.sample(size, rng)
        y = G.sample(size, rng)
        return float(np.var(F.cdf(y))), float(np.var(G.cdf(x)))
    raise ModelError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# censored data


@dataclass(frozen=True)
class CovKernel:
    func: Callable
    symmetric: bool = True
    label: str = ""

    def __call__(self, s, t):
        return self.func(s, t)

    def gram(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        return np.asarray(self.func(t[:, None], t[None, :]), dtype=float)


@dataclass(frozen=True)
class CensoredModel:
    """Lifetimes X ~ F, censoring C ~ G independent, observed up to horizon tau.

    ``hbar(t) = P(Z >= t) = (1 - F(t-))(1 - G(t-))`` must stay above
    ``eps_h`` on [0, tau].
    """

    F: DistributionSpec
    G: DistributionSpec
    tau: float
    eps_h: float = 1e-6
    grid_cells: int = 4096

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ModelError("tau must be positive and finite")
        if float(self.F.cdf_left(0.0)) > 0 or float(self.G.cdf_left(0.0)) > 0:
            raise ModelError("lifetimes and censoring times must be non-negative")
        if self.hbar(self.tau) <= self.eps_h:
            raise ModelError(
                f"P(Z >= tau) = {self.hbar(self.tau):.3g} is below eps_h={self.eps_h}: need H(tau) < 1"
            )

    # model functions

    def hbar(self, t):
        return self.F.survival_left(t) * self.G.survival_left(t)

    def hazard(self, t):
        """Cumulative hazard Lambda(t) = integral over [0, t] of dF / (1 - F(u-))."""
        t = np.asarray(t, dtype=float)
        if self.F.is_continuous:
            with np.errstate(divide="ignore"):
                return -np.log1p(-self.F.cdf(t))
        atoms, jumps = self._atom_hazard()
        out = np.array([jumps[atoms <= v].sum() for v in np.ravel(t)]).reshape(t.shape)
        return out[()] if out.ndim == 0 else out

    def _atom_hazard(self):
        atoms, probs = self.F.atom_table()
        keep = np.isfinite(atoms)
        atoms, probs = atoms[keep], probs[keep]
        return atoms, probs / self.F.survival_left(atoms)

    def _breakpoints(self) -> list[float]:
        pts = []
        for d in (self.F, self.G):
            if d.is_continuous:
                pts.extend(v for v in d.support() if math.isfinite(v))
            else:
                pts.extend(d.atom_table()[0])
        return sorted({p for p in pts if 0.0 < p < self.tau})

    # integrals against dLambda

    def lambda_integral(self, weight: Callable, t: float, include_zero: bool = True) -> float:
        """Integral of weight(u, dLambda(u)) dLambda(u) over [0, t] (or (0, t]).

        Adaptive quadrature for continuous F; a sum over atoms otherwise.
        """
        t = float(t)
        if t <= 0 and not include_zero:
            return 0.0
        if self.F.is_continuous:
            def integrand(u):
                return weight(u, 0.0) * self.F.pdf(u) / (1.0 - self.F.cdf(u))
            return _quad(integrand, 0.0, t, points=self._breakpoints(), epsrel=1e-12)
        atoms, jumps = self._atom_hazard()
        mask = (atoms <= t) & ((atoms >= 0) if include_zero else (atoms > 0))
        return float(sum(weight(a, j) * j for a, j in zip(atoms[mask], jumps[mask])))

    @cached_property
    def _grid(self):
        """Composite 8-point Gauss-Legendre cumulative integrals on [0, tau].

        Returns (grid, cum_haz, cum_km) where the cumulative arrays hold the
        hazard-kernel and KM-kernel inner integrals at each grid node.
        """
        base = np.linspace(0.0, self.tau, self.grid_cells + 1)
        grid = np.unique(np.concatenate([base, self._breakpoints()]))
        if self.F.is_continuous:
            a, b = grid[:-1], grid[1:]
            half = 0.5 * (b - a)
            nodes = 0.5 * (a + b)[:, None] + half[:, None] * _GL_X
            dens = self.F.pdf(nodes) / (1.0 - self.F.cdf(nodes))
            hb = self.hbar(nodes)
            haz = half * ((dens / hb) @ _GL_W)
            km = haz  # no atoms: both integrands equal 1/hbar
            cum_haz = np.concatenate([[0.0], np.cumsum(haz)])
            cum_km = np.concatenate([[0.0], np.cumsum(km)])
        else:
            cum_haz = np.array([self.lambda_integral(_haz_weight(self), g) for g in grid])
            cum_km = np.array([self.lambda_integral(_km_weight(self), g, include_zero=False)
                               for g in grid])
        return grid, cum_haz, cum_km

    def _cum(self, which: str, t):
        """Evaluate a cumulative inner integral at arbitrary t in [0, tau]."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.tau * (1 + 1e-12)):
            raise ModelError("kernel time outside [0, tau]")
        grid, cum_haz, cum_km = self._grid
        cum = cum_haz if which == "haz" else cum_km
        flat = np.minimum(np.ravel(t), self.tau)
        k = np.clip(np.searchsorted(grid, flat, side="right") - 1, 0, grid.size - 1)
        out = cum[k].copy()
        if self.F.is_continuous:
            a = grid[k]
            half = 0.5 * (flat - a)
            nodes = 0.5 * (a + flat)[:, None] + half[:, None] * _GL_X
            dens = self.F.pdf(nodes) / (1.0 - self.F.cdf(nodes))
            out += half * ((dens / self.hbar(nodes)) @ _GL_W)
        else:
            # discrete F: the inner integral is a step function of t
            which_w = _haz_weight(self) if which == "haz" else _km_weight(self)
            out = np.array([self.lambda_integral(which_w, v, include_zero=(which == "haz"))
                            for v in flat])
        out = out.reshape(t.shape)
        return out[()] if out.ndim == 0 else out

    def km_inner(self, t):
        """Integral over (0, t] of dLambda / ((1 - dLambda) hbar)."""
        return self._cum("km", t)

    def haz_inner(self, t):
        """Integral over [0, t] of (1 - dLambda) dLambda / hbar."""
        return self._cum("haz", t)

    def to_config(self) -> dict:
        return {"tau": repr(self.tau), "eps_h": repr(self.eps_h)}


def _haz_weight(model):
    return lambda u, dl: (1.0 - dl) / model.hbar(u)


def _km_weight(model):
    return lambda u, dl: 1.0 / ((1.0 - dl) * model.hbar(u))


def sigma2_hazard(m: CensoredModel) -> float:
    """Integral over [0, tau] of (1 - dLambda) / hbar dLambda."""
    return m.lambda_integral(_haz_weight(m), m.tau)


def _km_profile(m: CensoredModel, t):
    return (1.0 - m.F.cdf(t)) ** 2 * m.km_inner(t)


def sigma2_km(m: CensoredModel, grid_points: int = 10_000, return_argmax: bool = False):
    """sup over t in [0, tau] of (1 - F(t))**2 times the KM inner integral.

    The sup is taken on a uniform grid and polished by golden-section
    search on the two cells around the grid maximiser (tolerance 1e-8 in t).
    """
    t = np.linspace(0.0, m.tau, grid_points + 1)
    if not m.F.is_continuous:
        atoms = m.F.atom_table()[0]
        t = np.unique(np.concatenate([t, atoms[(atoms > 0) & (atoms <= m.tau)]]))
    vals = _km_profile(m, t)
    k = int(np.argmax(vals))
    best_t, best = float(t[k]), float(vals[k])
    if m.F.is_continuous and 0 < k < t.size - 1:
        res = optimize.minimize_scalar(
            lambda s: -float(_km_profile(m, s)), bracket=(t[k - 1], t[k], t[k + 1]),
            method="golden", tol=1e-8,
        )
        if -res.fun > best and t[k - 1] <= res.x <= t[k + 1]:
            best_t, best = float(res.x), float(-res.fun)
    return (best, best_t) if return_argmax else best


def km_cov_kernel(m: CensoredModel) -> CovKernel:
    """Covariance of the KM Gaussian limit: (1-F(s))(1-F(t)) times the inner integral to s ^ t."""
    def k(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return (1.0 - m.F.cdf(s)) * (1.0 - m.F.cdf(t)) * m.km_inner(np.minimum(s, t))

    return CovKernel(k, True, "km")


def haz_cov_kernel(m: CensoredModel) -> CovKernel:
    """Covariance of the Nelson-Aalen Gaussian limit: integral over [0, s ^ t]."""
    def k(s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return m.haz_inner(np.minimum(s, t))

    return CovKernel(k, True, "hazard")


def hazard_sup_rate(m: CensoredModel, r):
    """r**2 / (2 sigma2_hazard): exponent of the Nelson-Aalen sup-deviation."""
    return np.asarray(r, dtype=float) ** 2 / (2.0 * sigma2_hazard(m))


def km_sup_rate(m: CensoredModel, r):
    """r**2 / (2 sigma2_km): exponent of the Kaplan-Meier sup-deviation."""
    return np.asarray(r, dtype=float) ** 2 / (2.0 * sigma2_km(m))


# ---------------------------------------------------------------------------
# quantiles, L-statistics, means


def quantile_rate(F: DistributionSpec, p: float, x):
    """x**2 f(F^{-1}(p))**2 / (2 p (1 - p))."""
    if not 0.0 < p < 1.0:
        raise ModelError("p must lie in (0, 1)")
    dens = float(F.pdf(F.quantile(p)))
    if dens <= 0:
        raise DegenerateRate("zero density at the quantile")
    return np.asarray(x, dtype=float) ** 2 * dens**2 / (2.0 * p * (1.0 - p))


def _score_support(J: ScoreFunction, F: DistributionSpec) -> list[float]:
    """Edges in x-space outside of which J(F(x)) vanishes, plus interior breakpoints."""
    lo, hi = F.support()
    cuts = J.breakpoints()
    if J.trim is not None:
        cuts = cuts[(cuts >= J.trim[0]) & (cuts <= J.trim[1])]
        if J.trim[0] > 0:
            lo = float(F.quantile(J.trim[0]))
        if J.trim[1] < 1:
            hi = float(F.quantile(J.trim[1]))
    inner = [float(F.quantile(c)) for c in cuts if 0 < c < 1]
    if not F.is_continuous:
        inner += list(F.atom_table()[0])
    return [lo] + sorted(v for v in set(inner) if lo < v < hi) + [hi]


def lstat_mean(J: ScoreFunction, F: DistributionSpec) -> float:
    """m(J, F) = integral over (0, 1) of F^{-1}(u) J(u) du."""
    cuts = list(J.breakpoints())
    return _quad_pieces(lambda u: float(F.quantile(u)) * float(J(u)), cuts, epsrel=1e-11)


def lstat_variance(J: ScoreFunction, F: DistributionSpec) -> float:
    """Double integral of J(F(x)) J(F(y)) (F(x ^ y) - F(x) F(y)) dx dy.

    Written as ``2 * int J(F(y)) (1 - F(y)) g(y) dy`` with
    ``g(y) = int_{x < y} J(F(x)) F(x) dx``, each by adaptive quadrature.
    """
    edges = _score_support(J, F)

    def jf(x):
        return float(J(F.cdf(x)))

    def inner(y):
        e = [v for v in edges if v < y] + [y]
        return _quad_pieces(lambda x: jf(x) * float(F.cdf(x)), e, epsrel=1e-10)

    def outer(y):
        w = jf(y) * (1.0 - float(F.cdf(y)))
        return 0.0 if w == 0.0 else w * inner(y)

    val = 2.0 * _quad_pieces(outer, edges, epsrel=1e-9)
    return max(val, 0.0)


def lstat_rate(J: ScoreFunction, F: DistributionSpec, x):
    var = lstat_variance(J, F)
    if var <= 0:
        raise DegenerateRate("sigma^2(J, F) vanishes")
    return np.asarray(x, dtype=float) ** 2 / (2.0 * var)


def lambda21_integral(F: DistributionSpec) -> float:
    """Integral of sqrt(F (1 - F)) over the real line; finite iff Lambda_{2,1}(X) < inf."""
    lo, hi = F.support()
    edges = [lo, hi]
    if lo < 0 < hi:
        edges = [lo, 0.0, hi]
    def integrand(x):
        u = float(F.cdf(x))
        return math.sqrt(max(u * (1.0 - u), 0.0))

    return _quad_pieces(integrand, edges, epsrel=1e-8, epsabs=1e-10, limit=500)


def mean_rate(F: DistributionSpec, x):
    var = F.variance()
    if not var > 0:
        raise DegenerateRate("zero variance")
    return np.asarray(x, dtype=float) ** 2 / (2.0 * var)


# ---------------------------------------------------------------------------
# M-estimators


def _psi_breaks(psi: PsiSpec, theta: float) -> list[float]:
    k = getattr(psi.psi, "k", None)
    pts = [theta]
    if k is not None:
        pts += [theta - k, theta + k]
    return pts


def m_model_terms(psi: PsiSpec, F: DistributionSpec, h: float = 1e-5) -> tuple[float, float, float]:
    """(theta0, A, Gamma) for the population estimating equation Psi(theta) = E psi(X, theta).

    theta0 is the root of Psi in the search box, A = Psi'(theta0) by
    central differences and Gamma = Var psi(X, theta0).
    """
    def Psi(theta):
        return _expect(F, lambda x: psi.psi(x, theta), _psi_breaks(psi, theta))

    lo, hi = psi.center - psi.radius, psi.center + psi.radius
    f_lo, f_hi = Psi(lo), Psi(hi)
    if f_lo * f_hi > 0:
        raise ModelError("population Psi has no sign change in the search box")
    root, _ = bracketed_root(lambda t: np.array([Psi(float(v)) for v in np.atleast_1d(t)]),
                             lo, hi, f_lo, f_hi, ftol=1e-14)
    theta0 = float(root[0])
    A = (Psi(theta0 + h) - Psi(theta0 - h)) / (2 * h)
    gamma = _expect(F, lambda x: psi.psi(x, theta0) ** 2, _psi_breaks(psi, theta0)) - Psi(theta0) ** 2
    return theta0, A, gamma


def m_rate(A, Gamma, z):
    """0.5 <A z, Gamma^{-1} A z> via a Cholesky solve."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or Gamma.shape != (d, d) or z.shape != (d,):
        raise ModelError("A, Gamma must be d x d and z of length d")
    if np.linalg.matrix_rank(A) < d:
        raise ModelError("A is singular")
    if not np.allclose(Gamma, Gamma.T):
        raise ModelError("Gamma must be symmetric")
    try:
        factor = linalg.cho_factor(Gamma)
    except linalg.LinAlgError:
        raise ModelError("Gamma is not positive definite") from None
    v = A @ z
    return 0.5 * float(v @ linalg.cho_solve(factor, v))


def gaussian_finite_rate(K: CovKernel, times, phi) -> float:
    """sup over alpha of <phi, alpha> - 0.5 alpha' Sigma alpha, Sigma = K(t_k, t_j).

    Equals 0.5 phi' Sigma^+ phi when phi lies in the range of Sigma and
    +inf otherwise.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if phi.shape != times.shape:
        raise ModelError("phi must have one entry per time")
    sigma = K.gram(times)
    sigma = 0.5 * (sigma + sigma.T)
    if np.linalg.eigvalsh(sigma).min() < -1e-9:
        raise ModelError("kernel Gram matrix is not positive semi-definite")
    alpha, *_ = np.linalg.lstsq(sigma, phi, rcond=1e-12)
    if np.linalg.norm(sigma @ alpha - phi) > 1e-8 * (1.0 + np.linalg.norm(phi)):
        return math.inf
    return 0.5 * float(phi @ alpha)
