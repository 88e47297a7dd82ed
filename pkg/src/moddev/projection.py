"""Hadamard-derivative operators and the contraction-principle projection.

A discretised rate puts mass ``w_i`` on support points ``x_i``; a direction
``gamma`` has cost ``scale * 0.5 * sum(w * gamma**2)`` and induces the path
``alpha(t) = sum_{x_i <= t} w_i gamma_i``.  A :class:`DerivativeOp` is a
linear map from paths (sampled at its nodes) to outputs.  Projecting the
rate through the operator is the equality-constrained quadratic program

    minimise 0.5 gamma' W gamma  subject to  C gamma = b,

whose value is ``0.5 b' (C W^-1 C')^+ b`` when ``b`` is reachable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .distributions import DistributionSpec
from .errors import DomainViolation, GridMismatch, ModelError
from .estimators import PsiSpec, ScoreFunction
from .rates import m_model_terms

__all__ = [
    "DiscretizedRate",
    "OpBlock",
    "DerivativeOp",
    "HadamardReport",
    "ProjectionSolver",
    "apply_derivative",
    "check_hadamard",
    "project_rate",
    "project_rate_curve",
    "refinement_table",
    "brute_force_projection",
    "indicator_features",
    "wilcoxon_op",
    "product_integral_op",
    "inverse_map_op",
    "copula_op",
    "m_root_op",
    "lstat_linear_op",
    "wilcoxon_problem",
    "quantile_problem",
    "lstat_problem",
    "m_root_problem",
    "copula_problem",
    "product_integral_problem",
    "OP_KINDS",
]

OP_KINDS = ("wilcoxon-bilinear", "product-integral", "inverse-map", "copula", "m-root", "lstat-linear")


# ---------------------------------------------------------------------------
# discretised rate


@dataclass(frozen=True)
class DiscretizedRate:
    """Quadratic rate 0.5 * scale * sum(w * gamma**2) on support points.

    ``points`` is 1-D for a univariate law or ``(N, 2)`` for a bivariate
    one.  The centering constraint ``sum(w * gamma) = 0`` is added by the
    projection.
    """

    points: np.ndarray
    masses: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.masses, dtype=float)
        if pts.ndim not in (1, 2) or pts.shape[0] != w.size or w.ndim != 1:
            raise ModelError("points and masses must have matching length")
        if np.any(w <= 0):
            raise ModelError("masses must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ModelError("masses must sum to 1 within 1e-12")
        if not self.scale > 0:
            raise ModelError("scale must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", w)

    @classmethod
    def quantile_grid(cls, F: DistributionSpec, N: int, scale: float = 1.0) -> "DiscretizedRate":
        """Equal masses 1/N at the quantile midpoints F^{-1}((i - 1/2)/N)."""
        if N < 1:
            raise ModelError("grid size must be positive")
        levels = (np.arange(N) + 0.5) / N
        return cls(np.asarray(F.quantile(levels), dtype=float), np.full(N, 1.0 / N), scale)

    @classmethod
    def product_grid(cls, F: DistributionSpec, G: DistributionSpec, n_side: int,
                     scale: float = 1.0) -> "DiscretizedRate":
        """Independent pairs on the product of two quantile-midpoint grids."""
        levels = (np.arange(n_side) + 0.5) / n_side
        xs, ys = np.meshgrid(F.quantile(levels), G.quantile(levels), indexing="ij")
        pts = np.column_stack([xs.ravel(), ys.ravel()])
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), scale)

    @property
    def N(self) -> int:
        return self.masses.size

    def value(self, gamma) -> float:
        gamma = np.asarray(gamma, dtype=float)
        return 0.5 * self.scale * float(np.dot(self.masses, gamma**2))

    def path(self, gamma, t):
        """alpha(t) = sum over x_i <= t of w_i gamma_i (componentwise for pairs)."""
        feats = indicator_features(self.points, np.atleast_1d(np.asarray(t, dtype=float))
                                   if self.points.ndim == 1 else np.atleast_2d(t))
        return feats @ (self.masses * np.asarray(gamma, dtype=float))


def indicator_features(points: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """S[k, i] = 1{x_i <= node_k} (componentwise for bivariate points)."""
    points = np.asarray(points, dtype=float)
    nodes = np.asarray(nodes, dtype=float)
    if points.ndim == 1:
        return (points[None, :] <= nodes[:, None]).astype(float)
    return ((points[None, :, 0] <= nodes[:, None, 0]) & (points[None, :, 1] <= nodes[:, None, 1])).astype(float)


# ---------------------------------------------------------------------------
# derivative operators


@dataclass(frozen=True)
class OpBlock:
    """One input of a derivative: its path is sampled at ``nodes`` and mapped by ``matrix``."""

    nodes: np.ndarray
    matrix: np.ndarray
    features: Callable = indicator_features

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        mat = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if mat.shape[1] != nodes.shape[0]:
            raise GridMismatch("matrix columns must match the number of nodes")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "matrix", mat)


@dataclass(frozen=True)
class DerivativeOp:
    """Linear derivative Phi'_theta, with the nonlinear map it linearises.

    ``phi(hs)`` evaluates Phi(theta + h) for perturbations ``hs`` given as
    node values (one array per block); ``phi`` of zeros is Phi(theta).
    ``outputs`` labels the codomain grid.
    """

    kind: str
    blocks: tuple
    outputs: np.ndarray
    phi: Callable | None = field(default=None, repr=False)
    scalar: bool = False
    base: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ModelError(f"unknown derivative kind {self.kind!r}")
        n_out = {b.matrix.shape[0] for b in self.blocks}
        if len(n_out) != 1:
            raise GridMismatch("blocks disagree on the number of outputs")

    @property
    def n_out(self) -> int:
        return self.blocks[0].matrix.shape[0]

    @property
    def nodes(self):
        return self.blocks[0].nodes if len(self.blocks) == 1 else tuple(b.nodes for b in self.blocks)

    def _split(self, h) -> list[np.ndarray]:
        if len(self.blocks) == 1 and not isinstance(h, (tuple, list)):
            h = [h]
        if len(h) != len(self.blocks):
            raise GridMismatch(f"{self.kind} expects {len(self.blocks)} direction block(s)")
        out = []
        for b, hb in zip(self.blocks, h):
            hb = np.asarray(hb, dtype=float)
            if hb.shape != (b.nodes.shape[0],):
                raise GridMismatch(f"direction has shape {hb.shape}, op nodes {b.nodes.shape[0]}")
            out.append(hb)
        return out

    def apply(self, h):
        out = sum(b.matrix @ hb for b, hb in zip(self.blocks, self._split(h)))
        return float(out[0]) if self.scalar else out

    def evaluate(self, h=None):
        """The nonlinear map at theta + h."""
        if self.phi is None:
            raise ModelError(f"{self.kind} operator has no nonlinear map attached")
        hs = self._split(h) if h is not None else [np.zeros(b.nodes.shape[0]) for b in self.blocks]
        out = np.atleast_1d(np.asarray(self.phi(hs), dtype=float))
        return float(out[0]) if self.scalar else out

    def select(self, indices) -> "DerivativeOp":
        """Restrict to a subset of outputs; the nonlinear map is restricted too."""
        idx = np.atleast_1d(np.asarray(indices, dtype=int))
        blocks = tuple(OpBlock(b.nodes, b.matrix[idx], b.features) for b in self.blocks)
        phi = None
        if self.phi is not None:
            inner = self.phi
            phi = lambda hs: np.atleast_1d(inner(hs))[idx]  # noqa: E731
        return DerivativeOp(self.kind, blocks, np.asarray(self.outputs)[idx], phi,
                            scalar=idx.size == 1, base=self.base)


def apply_derivative(op: DerivativeOp, h):
    return op.apply(h)


def _diff_matrix(k: int) -> np.ndarray:
    """Increments of node values, with the value before the first node taken as 0."""
    return np.eye(k) - np.eye(k, k=-1)


def wilcoxon_op(A, dB) -> DerivativeOp:
    """Phi(A, B) = integral of A dB with both paths on a common node grid.

    ``A`` holds the base CDF of the first sample at the nodes and ``dB`` the
    base masses of the second sample there.  The derivative is
    ``sum A_j d beta_j + sum alpha_j dB_j``; the map is exactly bilinear.
    """
    A = np.asarray(A, dtype=float)
    dB = np.asarray(dB, dtype=float)
    if A.shape != dB.shape:
        raise GridMismatch("A and dB must share the node grid")
    k = A.size
    D = _diff_matrix(k)
    m_alpha = dB[None, :]
    m_beta = (A @ D)[None, :]

    def phi(hs):
        a, b = hs
        return np.dot(A + a, dB + D @ b)

    nodes = np.arange(k, dtype=float)
    return DerivativeOp(
        "wilcoxon-bilinear", (OpBlock(nodes, m_alpha), OpBlock(nodes, m_beta)),
        np.array([0.0]), phi, scalar=True, base={"A": A, "dB": dB},
    )


def product_integral_op(dA, nodes=None) -> DerivativeOp:
    """Phi(A)(t_m) = prod over k <= m of (1 + dA_k) on a node grid.

    The derivative at output m is
    ``sum_k prod_{l<k}(1 + dA_l) d alpha_k prod_{k<l<=m}(1 + dA_l)``,
    the discrete form of the product-integral derivative.
    """
    dA = np.asarray(dA, dtype=float)
    k = dA.size
    if np.any(1.0 + dA <= 0):
        raise DomainViolation("product integral needs dA > -1")
    nodes = np.arange(k, dtype=float) if nodes is None else np.asarray(nodes, dtype=float)
    fac = 1.0 + dA
    before = np.concatenate([[1.0], np.cumprod(fac)[:-1]])
    M = np.zeros((k, k))
    for m in range(k):
        # prod_{k<l<=m} via explicit products keeps zero factors exact
        after = np.array([np.prod(fac[j + 1 : m + 1]) for j in range(m + 1)])
        M[m, : m + 1] = before[: m + 1] * after
    M = M @ _diff_matrix(k)

    def phi(hs):
        (h,) = hs
        return np.cumprod(1.0 + dA + _diff_matrix(k) @ h)

    return DerivativeOp("product-integral", (OpBlock(nodes, M),), nodes.copy(), phi,
                        base={"dA": dA})


def inverse_map_op(F, levels, nodes=None, eps: float = 1e-6, check_density: bool = True) -> DerivativeOp:
    """Phi(F) = F^{-1}(p) for each level p; derivative -alpha(xi_p) / f(xi_p).

    ``F`` needs ``cdf``, ``pdf`` and ``quantile``.  Paths are the linear
    interpolants of their values at ``nodes`` (default: the quantiles
    themselves), extended as constants.  The density must be positive on
    [F^{-1}(p) - eps, F^{-1}(q) + eps], else DomainViolation.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((levels <= 0) | (levels >= 1)):
        raise ModelError("levels must lie in (0, 1)")
    xi = np.atleast_1d(np.asarray(F.quantile(levels), dtype=float))
    if check_density:
        scan = np.linspace(xi.min() - eps, xi.max() + eps, 2001)
        if np.any(np.asarray(F.pdf(scan)) <= 0):
            raise DomainViolation("density vanishes near the quantiles: the inverse map is not differentiable")
    dens = np.atleast_1d(np.asarray(F.pdf(xi), dtype=float))
    if np.any(dens <= 0):
        raise DomainViolation("zero density at a quantile")
    nodes = np.unique(xi) if nodes is None else np.asarray(nodes, dtype=float)
    if np.any(np.diff(nodes) <= 0):
        raise ModelError("nodes must be strictly increasing")
    M = np.array([-_interp_weights(nodes, x) / d for x, d in zip(xi, dens)])

    def phi(hs):
        (h,) = hs
        return np.array([_path_inverse(F, nodes, h, p) for p in levels])

    return DerivativeOp("inverse-map", (OpBlock(nodes, M),), levels, phi,
                        scalar=levels.size == 1, base={"xi": xi, "density": dens})


def _interp_weights(nodes: np.ndarray, x: float) -> np.ndarray:
    """Weights w with w @ h = np.interp(x, nodes, h)."""
    w = np.zeros(nodes.size)
    if x <= nodes[0]:
        w[0] = 1.0
    elif x >= nodes[-1]:
        w[-1] = 1.0
    else:
        k = int(np.searchsorted(nodes, x, side="right") - 1)
        s = (x - nodes[k]) / (nodes[k + 1] - nodes[k])
        w[k], w[k + 1] = 1.0 - s, s
    return w


def _path_inverse(F, nodes, h, p) -> float:
    """First crossing inf{x : F(x) + alpha(x) >= p}, alpha piecewise linear on nodes.

    Cells are scanned left to right; inside a cell the crossing is found by
    Brent's method (outer cells, where alpha is constant, use F^{-1}).
    """
    def g(x):
        return float(F.cdf(x)) + float(np.interp(x, nodes, h)) - p

    # left tail: alpha = h[0]
    target = p - h[0]
    if target <= 0:
        return -math.inf
    if float(F.cdf(nodes[0])) >= target:
        return float(F.quantile(target))
    for k in range(nodes.size - 1):
        lo, hi = nodes[k], nodes[k + 1]
        g_lo, g_hi = g(lo), g(hi)
        if g_lo >= 0:
            return float(lo)
        if g_hi >= 0:
            return optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    target = p - h[-1]
    if target >= 1:
        return math.inf
    return float(max(F.quantile(target), nodes[-1]))


def _bilinear_weights(grid: np.ndarray, u: float, v: float) -> np.ndarray:
    """Weights of the (K+1)^2 grid values in the bilinear interpolant at (u, v)."""
    k = grid.size
    w = np.zeros((k, k))
    i = int(np.clip(np.searchsorted(grid, u, side="right") - 1, 0, k - 2))
    j = int(np.clip(np.searchsorted(grid, v, side="right") - 1, 0, k - 2))
    s = (u - grid[i]) / (grid[i + 1] - grid[i])
    r = (v - grid[j]) / (grid[j + 1] - grid[j])
    w[i, j] = (1 - s) * (1 - r)
    w[i + 1, j] = s * (1 - r)
    w[i, j + 1] = (1 - s) * r
    w[i + 1, j + 1] = s * r
    return w.ravel()


def _copula_base(base: str, theta: float):
    if base == "independence":
        return (lambda u, v: u * v, lambda u, v: v, lambda u, v: u)
    if base == "fgm":
        if not -1 <= theta <= 1:
            raise ModelError("FGM parameter must lie in [-1, 1]")
        C = lambda u, v: u * v * (1 + theta * (1 - u) * (1 - v))  # noqa: E731
        Cu = lambda u, v: v * (1 + theta * (1 - v) * (1 - 2 * u))  # noqa: E731
        Cv = lambda u, v: u * (1 + theta * (1 - u) * (1 - 2 * v))  # noqa: E731
        return C, Cu, Cv
    raise ModelError(f"unknown copula base {base!r}")


def copula_op(points, grid_size: int = 10, base: str = "independence", theta: float = 0.0,
              grid=None) -> DerivativeOp:
    """Copula map H -> H(F^{-1}(u), G^{-1}(v)) at a copula with uniform marginals.

    Paths alpha(x, y) are bilinear on a grid over [0, 1]^2 whose top row and
    column (x or y = 1) carry the marginal perturbations.  The derivative is
    ``alpha(u, v) - C_u(u, v) alpha(u, 1) - C_v(u, v) alpha(1, v)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any((pts <= 0) | (pts >= 1)):
        raise ModelError("copula evaluation points must lie in (0, 1)^2")
    g = np.linspace(0.0, 1.0, grid_size + 1) if grid is None else np.asarray(grid, dtype=float)
    if g[0] != 0.0 or g[-1] != 1.0:
        raise ModelError("copula grid must span [0, 1]")
    C, Cu, Cv = _copula_base(base, theta)
    K = g.size
    gu, gv = np.meshgrid(g, g, indexing="ij")
    nodes = np.column_stack([gu.ravel(), gv.ravel()])
    rows = []
    for u, v in pts:
        rows.append(_bilinear_weights(g, u, v) - Cu(u, v) * _bilinear_weights(g, u, 1.0)
                    - Cv(u, v) * _bilinear_weights(g, 1.0, v))
    M = np.array(rows)

    def phi(hs):
        (h,) = hs
        table = h.reshape(K, K)
        out = []
        for u, v in pts:
            x = _pl_inverse(g, g + table[:, -1], u)
            y = _pl_inverse(g, g + table[-1, :], v)
            out.append(C(x, y) + _bilinear_weights(g, x, y) @ h)
        return np.array(out)

    return DerivativeOp("copula", (OpBlock(nodes, M),), pts, phi, scalar=len(pts) == 1,
                        base={"base": base, "theta": theta})


def _pl_inverse(x, fx, level: float) -> float:
    """inf{t : f(t) >= level} for the piecewise-linear f with values fx at x."""
    for k in range(x.size - 1):
        a, b = fx[k], fx[k + 1]
        if a >= level:
            return float(x[k])
        if b >= level:
            return float(x[k] + (level - a) / (b - a) * (x[k + 1] - x[k]))
    return float(x[-1])


def m_root_op(Psi: Callable, theta0: float, A: float, nodes, bracket=None) -> DerivativeOp:
    """Root map Psi -> theta with Psi(theta) = 0; derivative f -> -f(theta0) / A.

    Perturbations f are linear interpolants of their values at the theta
    ``nodes``.  ``Psi`` is the base (population) estimating function.
    """
    nodes = np.asarray(nodes, dtype=float)
    if not (nodes[0] < theta0 < nodes[-1]):
        raise ModelError("theta0 must lie strictly inside the node range")
    if A == 0:
        raise ModelError("A must be nonzero")
    k = int(np.searchsorted(nodes, theta0, side="right") - 1)
    s = (theta0 - nodes[k]) / (nodes[k + 1] - nodes[k])
    M = np.zeros((1, nodes.size))
    M[0, k] = -(1 - s) / A
    M[0, k + 1] = -s / A
    lo, hi = (nodes[0], nodes[-1]) if bracket is None else bracket

    def phi(hs):
        (h,) = hs
        fun = lambda th: Psi(th) + np.interp(th, nodes, h)  # noqa: E731
        f_lo, f_hi = fun(lo), fun(hi)
        if f_lo * f_hi > 0:
            raise DomainViolation("perturbed estimating equation has no root in the bracket")
        return optimize.brentq(fun, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)

    return DerivativeOp("m-root", (OpBlock(nodes, M),), np.array([theta0]), phi, scalar=True,
                        base={"theta0": theta0, "A": A})


def lstat_linear_op(J: ScoreFunction, F: DistributionSpec, nodes) -> DerivativeOp:
    """L-functional with derivative alpha -> -integral alpha(x) J(F(x)) dx (trapezoid on nodes).

    The nonlinear map uses Phi(F + alpha) - Phi(F) = -integral [K(F + alpha) - K(F)] dx
    with K the antiderivative of J, discretised by the same trapezoid rule.
    """
    nodes = np.asarray(nodes, dtype=float)
    if np.any(np.diff(nodes) <= 0):
        raise ModelError("nodes must be strictly increasing")
    dx = np.diff(nodes)
    omega = np.zeros(nodes.size)
    omega[:-1] += 0.5 * dx
    omega[1:] += 0.5 * dx
    Fx = np.asarray(F.cdf(nodes), dtype=float)
    M = (-omega * J(Fx))[None, :]

    def phi(hs):
        (h,) = hs
        return -np.dot(omega, J.antiderivative(Fx + h) - J.antiderivative(Fx))

    return DerivativeOp("lstat-linear", (OpBlock(nodes, M),), np.array([0.0]), phi, scalar=True,
                        base={"omega": omega})


# ---------------------------------------------------------------------------
# Hadamard check


@dataclass(frozen=True)
class HadamardReport:
    t: np.ndarray
    errors: np.ndarray
    derivative_norm: float
    passed: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "t": self.t.tolist(),
            "errors": self.errors.tolist(),
            "derivative_norm": self.derivative_norm,
            "passed": self.passed,
            "reason": self.reason,
        }


def check_hadamard(op: DerivativeOp, h, phi: Callable | None = None, t_sequence=None) -> HadamardReport:
    """Difference quotients (Phi(theta + t h) - Phi(theta)) / t against Phi'(h).

    Passes when the sup-norm error is nonincreasing along the decreasing t
    sequence and its final value is below 1e-3 (1 + |Phi'(h)|).  The
    monotonicity slack is 1e-9 (1 + |Phi'(h)|) plus the rounding floor
    ``64 eps (1 + |Phi(theta)|) / t`` of a difference quotient.
    """
    t_seq = 2.0 ** -np.arange(1, 21) if t_sequence is None else np.asarray(t_sequence, dtype=float)
    hs = op._split(h)
    evaluate = (lambda g: np.atleast_1d(np.asarray(phi(g), dtype=float))) if phi is not None \
        else (lambda g: np.atleast_1d(op.evaluate(g)))
    deriv = np.atleast_1d(np.asarray(op.apply(h), dtype=float))
    dnorm = float(np.max(np.abs(deriv))) if deriv.size else 0.0
    errors = np.full(t_seq.size, np.nan)
    try:
        base = evaluate([np.zeros_like(hb) for hb in hs])
        for j, t in enumerate(t_seq):
            moved = evaluate([t * hb for hb in hs])
            errors[j] = float(np.max(np.abs((moved - base) / t - deriv)))
    except DomainViolation as exc:
        return HadamardReport(t_seq, errors, dnorm, False, f"domain violation: {exc}")
    if not np.all(np.isfinite(errors)):
        return HadamardReport(t_seq, errors, dnorm, False, "non-finite difference quotient")
    scale = 1.0 + dnorm
    floor = 64 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(base)))) / t_seq
    slack = 1e-9 * scale + floor
    rises = np.flatnonzero(errors[1:] > errors[:-1] + slack[1:])
    if rises.size:
        return HadamardReport(t_seq, errors, dnorm, False, f"error increases at t={t_seq[rises[0] + 1]:.3g}")
    if errors[-1] >= 1e-3 * scale:
        return HadamardReport(t_seq, errors, dnorm, False, "final error above 1e-3 (1 + |derivative|)")
    return HadamardReport(t_seq, errors, dnorm, True)


# ---------------------------------------------------------------------------
# projection


def _as_rates(rate) -> tuple:
    return tuple(rate) if isinstance(rate, (tuple, list)) else (rate,)


def assemble(rate, op: DerivativeOp) -> tuple[np.ndarray, np.ndarray]:
    """Constraint matrix C (outputs then one centering row per block) and diag(W)."""
    rates = _as_rates(rate)
    if len(rates) != len(op.blocks):
        raise GridMismatch(f"{op.kind} needs {len(op.blocks)} rate block(s), got {len(rates)}")
    n_tot = sum(r.N for r in rates)
    C = np.zeros((op.n_out + len(rates), n_tot))
    wdiag = np.empty(n_tot)
    start = 0
    for b, (blk, r) in enumerate(zip(op.blocks, rates)):
        sl = slice(start, start + r.N)
        if blk.features is indicator_features and r.points.ndim == 1:
            # M @ 1{x_i <= node_k}: tail sums of M over sorted nodes
            order = np.argsort(blk.nodes, kind="stable")
            tails = np.cumsum(blk.matrix[:, order][:, ::-1], axis=1)[:, ::-1]
            pos = np.searchsorted(blk.nodes[order], r.points, side="left")
            padded = np.concatenate([tails, np.zeros((op.n_out, 1))], axis=1)
            C[: op.n_out, sl] = padded[:, pos] * r.masses
        else:
            S = blk.features(r.points, blk.nodes)
            C[: op.n_out, sl] = (blk.matrix @ S) * r.masses
        C[op.n_out + b, sl] = r.masses
        wdiag[sl] = r.scale * r.masses
        start += r.N
    return C, wdiag


class ProjectionSolver:
    """Factor C W^-1 C' once; solve for many targets.

    Rank deficiency is handled by a pseudo-inverse; a target whose normal
    equations leave a residual above 1e-8 (1 + |b|) is unreachable and its
    value is +inf.
    """

    def __init__(self, rate, op: DerivativeOp):
        self.op = op
        self.C, self.wdiag = assemble(rate, op)
        Q = (self.C / self.wdiag) @ self.C.T
        Q = 0.5 * (Q + Q.T)
        evals, evecs = np.linalg.eigh(Q)
        cut = max(evals.max(initial=0.0), 0.0) * 1e-12 * Q.shape[0]
        inv = np.where(evals > cut, 1.0 / np.where(evals > cut, evals, 1.0), 0.0)
        self._Q = Q
        self._pinv = (evecs * inv) @ evecs.T

    def target(self, y) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.size != self.op.n_out:
            raise GridMismatch(f"target has {y.size} entries, operator has {self.op.n_out} outputs")
        return np.concatenate([y, np.zeros(self.C.shape[0] - self.op.n_out)])

    def solve(self, y, return_minimizer: bool = False):
        b = self.target(y)
        lam = self._pinv @ b
        gamma = (self.C.T @ lam) / self.wdiag
        resid = np.linalg.norm(self.C @ gamma - b)
        if resid > 1e-8 * (1.0 + np.linalg.norm(b)):
            return (math.inf, None) if return_minimizer else math.inf
        value = 0.5 * float(np.dot(gamma * self.wdiag, gamma))
        return (value, gamma) if return_minimizer else value


def project_rate(rate, op: DerivativeOp, y, return_minimizer: bool = False):
    """inf of the discretised rate over directions whose derivative equals y."""
    return ProjectionSolver(rate, op).solve(y, return_minimizer)


def project_rate_curve(rate, op: DerivativeOp, y_list: Sequence) -> list[float]:
    if len(y_list) == 0:
        return []
    solver = ProjectionSolver(rate, op)
    return [solver.solve(y) for y in y_list]


def refinement_table(build: Callable[[int], tuple], sizes: Sequence[int], y, exact: float | None = None):
    """Projected values along a grid-refinement sequence.

    ``build(N)`` returns ``(rate, op)``.  Rows are dicts with N, value and,
    when ``exact`` is given, the absolute error.
    """
    rows = []
    for N in sizes:
        rate, op = build(int(N))
        value = project_rate(rate, op, y)
        row = {"N": int(N), "value": value}
        if exact is not None:
            row["error"] = abs(value - exact)
        rows.append(row)
    return rows


def brute_force_projection(rate, op: DerivativeOp, y) -> float:
    """Independent oracle: full KKT system by explicit loops and Gaussian elimination.

    Meant for small grids (N <= 25 per block) with full-rank constraints.
    """
    rates = _as_rates(rate)
    cols = []
    wd = []
    for blk, r in zip(op.blocks, rates):
        for i in range(r.N):
            col = []
            for row in range(op.n_out):
                acc = 0.0
                for k in range(blk.nodes.shape[0]):
                    node = blk.nodes[k]
                    x = r.points[i]
                    below = bool(np.all(x <= node))
                    if blk.features is not indicator_features:
                        below = blk.features(r.points[i : i + 1], blk.nodes[k : k + 1])[0, 0]
                    acc += blk.matrix[row, k] * float(below)
                col.append(acc * r.masses[i])
            cols.append((col, len(wd)))
            wd.append(r.scale * r.masses[i])
    n = len(wd)
    m = op.n_out + len(rates)
    C = [[0.0] * n for _ in range(m)]
    for j, (col, _) in enumerate(cols):
        for row in range(op.n_out):
            C[row][j] = col[row]
    j = 0
    for b, r in enumerate(rates):
        for i in range(r.N):
            C[op.n_out + b][j] = r.masses[i]
            j += 1
    size = n + m
    K = [[0.0] * (size + 1) for _ in range(size)]
    for i in range(n):
        K[i][i] = wd[i]
        for row in range(m):
            K[i][n + row] = C[row][i]
            K[n + row][i] = C[row][i]
    rhs = list(np.atleast_1d(np.asarray(y, dtype=float))) + [0.0] * len(rates)
    for row in range(m):
        K[n + row][size] = rhs[row]
    # Gaussian elimination with partial pivoting
    for col in range(size):
        piv = max(range(col, size), key=lambda r_: abs(K[r_][col]))
        if abs(K[piv][col]) < 1e-300:
            raise ModelError("singular KKT system")
        K[col], K[piv] = K[piv], K[col]
        for r_ in range(col + 1, size):
            f = K[r_][col] / K[col][col]
            if f:
                for c in range(col, size + 1):
                    K[r_][c] -= f * K[col][c]
    sol = [0.0] * size
    for r_ in range(size - 1, -1, -1):
        acc = K[r_][size] - sum(K[r_][c] * sol[c] for c in range(r_ + 1, size))
        sol[r_] = acc / K[r_][r_]
    return 0.5 * sum(wd[i] * sol[i] ** 2 for i in range(n))


# ---------------------------------------------------------------------------
# problem builders


def wilcoxon_problem(F: DistributionSpec, G: DistributionSpec, lam: float, N: int):
    """Two-sample Wilcoxon: rates I_F / (1 - lam) and I_G / lam, op on G's grid."""
    if not 0 < lam < 1:
        raise ModelError("lambda must lie in (0, 1)")
    rate_f = DiscretizedRate.quantile_grid(F, N, scale=1.0 / (1.0 - lam))
    rate_g = DiscretizedRate.quantile_grid(G, N, scale=1.0 / lam)
    y = rate_g.points
    op = wilcoxon_op(F.cdf(y), rate_g.masses)
    op = DerivativeOp(op.kind, tuple(OpBlock(y, b.matrix) for b in op.blocks), op.outputs,
                      op.phi, scalar=True, base=op.base)
    return (rate_f, rate_g), op


def quantile_problem(F: DistributionSpec, p, N: int):
    rate = DiscretizedRate.quantile_grid(F, N)
    return rate, inverse_map_op(F, p)


def lstat_problem(J: ScoreFunction, F: DistributionSpec, N: int, nodes=None):
    """L-functional projection; nodes default to a 2N-point grid on a finite support."""
    rate = DiscretizedRate.quantile_grid(F, N)
    if nodes is None:
        lo, hi = F.support()
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ModelError("pass explicit nodes for an unbounded support")
        nodes = np.linspace(lo, hi, 2 * N + 1)
    return rate, lstat_linear_op(J, F, nodes)


def m_root_problem(psi: PsiSpec, F: DistributionSpec, N: int, n_nodes: int = 201):
    """M-estimator projection; features psi(x_i, theta_k) on a theta grid over the box."""
    theta0, A, _ = m_model_terms(psi, F)
    lo, hi = psi.center - psi.radius, psi.center + psi.radius
    nodes = np.linspace(lo, hi, n_nodes)
    if theta0 in nodes:
        nodes = np.linspace(lo, hi, n_nodes + 1)

    def Psi(theta):
        from .rates import _expect, _psi_breaks

        return _expect(F, lambda x: psi.psi(x, theta), _psi_breaks(psi, theta))

    op = m_root_op(Psi, theta0, A, nodes, bracket=(lo, hi))
    feats = lambda pts, nd: psi.psi(np.asarray(pts)[None, :], np.asarray(nd)[:, None])  # noqa: E731
    op = DerivativeOp("m-root", (OpBlock(nodes, op.blocks[0].matrix, feats),), op.outputs,
                      op.phi, scalar=True, base=op.base)
    return DiscretizedRate.quantile_grid(F, N), op


def copula_problem(n_side: int, points, grid_size: int = 10, base: str = "independence", theta: float = 0.0):
    """Copula projection at an independence or FGM base with uniform marginals.

    For FGM the support points stay on the product grid and the masses
    are the copula density cell probabilities.
    """
    from .distributions import uniform

    rate = DiscretizedRate.product_grid(uniform(), uniform(), n_side)
    if base == "fgm":
        pts = rate.points
        dens = 1 + theta * (1 - 2 * pts[:, 0]) * (1 - 2 * pts[:, 1])
        rate = DiscretizedRate(pts, dens / dens.sum())
    return rate, copula_op(points, grid_size, base, theta)


def product_integral_problem(F: DistributionSpec, tau: float, K: int):
    """Product integral of -Lambda on a K-cell grid of (0, tau]; outputs reproduce 1 - F."""
    nodes = np.linspace(0.0, tau, K + 1)[1:]
    surv = 1.0 - np.asarray(F.cdf(np.concatenate([[0.0], nodes])), dtype=float)
    dA = surv[1:] / surv[:-1] - 1.0
    return product_integral_op(dA, nodes)
