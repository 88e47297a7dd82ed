"""Kaplan-Meier goodness-of-fit test of F = F0 against F = F1 with error exponents.

The test rejects when sqrt(n)/a(n) * sup_[0, tau] |F_hat_n - F0| >= c.
Under the null the Type I error decays like exp(-a(n)^2 c^2 / (2 sigma2_KM));
under a fixed alternative the Type II error decays faster than any such
exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import DistributionSpec
from .errors import InsufficientHits, ModelError
from .estimators import kaplan_meier
from .montecarlo import (
    MIN_HITS,
    StatisticSpec,
    TailEstimate,
    _wls,
    clopper_pearson,
    estimate_tail,
    simulate_deviations,
)
from .rates import CensoredModel, sigma2_km
from .samples import CensoredSample
from .scaling import ScalingSequence

__all__ = [
    "KmTestSpec",
    "KmTestResult",
    "ExponentReport",
    "km_statistic",
    "km_test",
    "theoretical_type1_exponent",
    "asymptotic_level",
    "error_exponents",
]

_ALT_STREAM = 4


@dataclass(frozen=True)
class KmTestSpec:
    F0: DistributionSpec
    F1: DistributionSpec
    G: DistributionSpec
    tau: float
    c: float
    scaling: ScalingSequence
    check_separation: bool = True  # False allows F1 = F0 for null-alternative studies

    def __post_init__(self):
        if not self.c >= 0:
            raise ModelError("critical value c must be non-negative")
        grid = np.linspace(0.0, self.tau, 10_001)
        if self.check_separation and not np.max(np.abs(self.F0.cdf(grid) - self.F1.cdf(grid))) > 0:
            raise ModelError("F0 and F1 agree on [0, tau]: the alternative is not separated")
        CensoredModel(self.F0, self.G, self.tau)
        CensoredModel(self.F1, self.G, self.tau)

    @property
    def null_model(self) -> CensoredModel:
        return CensoredModel(self.F0, self.G, self.tau)


@dataclass(frozen=True)
class KmTestResult:
    T: float
    scaled: float
    reject: bool

    def to_dict(self) -> dict:
        return {"T": self.T, "scaled": self.scaled, "reject": self.reject}


def km_statistic(data: CensoredSample, F0: DistributionSpec, tau: float) -> float:
    """T_n = sup over [0, tau] of |F_hat_n - F0|, evaluated exactly.

    Between consecutive points of {0, tau, KM jumps, atoms of F0} both
    functions are monotone with F_hat_n constant, so the sup is attained
    at a point value or a left limit.
    """
    km = kaplan_meier(data)
    pts = [0.0, float(tau)]
    pts += [t for t in km.jump_points if t <= tau]
    if not F0.is_continuous:
        atoms = F0.atom_table()[0]
        pts += [a for a in atoms if 0 <= a <= tau]
    pts = np.unique(np.asarray(pts, dtype=float))
    right = np.abs(km(pts) - F0.cdf(pts))
    left = np.abs(km.left_limit(pts) - F0.cdf_left(pts))
    left[0] = 0.0 if pts[0] == 0.0 else left[0]  # nothing to the left of 0 in [0, tau]
    return float(max(right.max(), left.max()))


def km_test(data: CensoredSample, spec: KmTestSpec) -> KmTestResult:
    T = km_statistic(data, spec.F0, spec.tau)
    scaled = math.sqrt(data.n) / float(spec.scaling(data.n)) * T
    return KmTestResult(T, scaled, bool(scaled >= spec.c))


def theoretical_type1_exponent(spec: KmTestSpec) -> float:
    """c^2 / (2 sigma2_KM) with sigma2_KM computed under F0."""
    return spec.c**2 / (2.0 * sigma2_km(spec.null_model))


def asymptotic_level(spec: KmTestSpec, n: int) -> float:
    """Advisory level exp(-a(n)^2 c^2 / (2 sigma2_KM)) implied by the exponent."""
    return math.exp(-float(spec.scaling(n)) ** 2 * theoretical_type1_exponent(spec))


@dataclass(frozen=True)
class ExponentReport:
    type1_rows: tuple
    type1_used: tuple
    type1_slope: float | None
    type1_theory: float
    type2_rows: tuple
    type2_exponents: tuple
    type2_bound_only: tuple
    type2_slope: float | None
    witness: bool | None
    config: dict = field(default_factory=dict)

    @property
    def type1_rel_error(self) -> float | None:
        if self.type1_slope is None or self.type1_theory == 0:
            return None
        return abs(self.type1_slope - self.type1_theory) / self.type1_theory

    def csv_rows(self) -> list[dict]:
        rows = []
        for r1, u, r2, e2, b2 in zip(self.type1_rows, self.type1_used, self.type2_rows,
                                     self.type2_exponents, self.type2_bound_only):
            rows.append({
                "n": r1.n, "a2": r1.a**2, "R": r1.R,
                "alpha_hits": r1.hits, "alpha_hat": r1.phat, "alpha_lo": r1.lo, "alpha_hi": r1.hi,
                "alpha_used": int(u),
                "beta_hits": r2.hits, "beta_hat": r2.phat, "beta_lo": r2.lo, "beta_hi": r2.hi,
                "beta_exponent": e2, "beta_bound_only": int(b2),
            })
        return rows

    def summary(self) -> dict:
        return {
            "type1_slope": self.type1_slope,
            "type1_theory": self.type1_theory,
            "type1_rel_error": self.type1_rel_error,
            "type2_slope": self.type2_slope,
            "type2_exponent_largest_n": self.type2_exponents[-1],
            "type2_bound_only_largest_n": bool(self.type2_bound_only[-1]),
            "dominance_witness": self.witness,
            "config": self.config,
        }


def error_exponents(spec: KmTestSpec, n_grid, R: int, seed: int, workers: int = 1,
                    strict: bool = False) -> ExponentReport:
    """Empirical Type I decay slope and Type II exponents across ``n_grid``.

    Type II frequencies with no hits are replaced by the bound 1/R, which
    makes the reported exponent -log(beta_hat)/a^2(n) a lower bound.  The
    dominance witness asks whether that exponent at the largest n exceeds
    the fitted Type I slope.
    """
    grid = [int(v) for v in np.atleast_1d(n_grid)]
    if len(grid) < 3 or any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ModelError("n_grid must be increasing with at least 3 points")
    theory = theoretical_type1_exponent(spec)
    null = StatisticSpec("km-sup", spec.F0, spec.G, tau=spec.tau)
    alt = StatisticSpec("km-sup", spec.F1, spec.G, tau=spec.tau, reference=spec.F0)

    rows1 = tuple(estimate_tail(null, n, spec.c, spec.scaling, R, seed, workers) for n in grid)
    used = tuple(r.hits >= MIN_HITS for r in rows1)
    slope1 = None
    if sum(used) >= 3:
        pick = [r for r, u in zip(rows1, used) if u]
        slope1, _ = _wls(np.array([r.a**2 for r in pick]), np.array([-math.log(r.phat) for r in pick]),
                         np.array([r.hits for r in pick], dtype=float))

    rows2, exps, bounds = [], [], []
    for n in grid:
        dev = simulate_deviations(alt, n, R, seed, workers, stream=_ALT_STREAM)
        a = float(spec.scaling(n))
        accepts = int(np.count_nonzero(math.sqrt(n) / a * dev < spec.c))
        lo, hi = clopper_pearson(accepts, R)
        rows2.append(TailEstimate(n, float(n), a, R, accepts, accepts / R, lo, hi))
        beta = max(accepts, 1) / R
        exps.append(-math.log(beta) / a**2)
        bounds.append(accepts == 0)
    usable2 = [r for r in rows2 if r.hits >= MIN_HITS]
    slope2 = None
    if len(usable2) >= 3:
        slope2, _ = _wls(np.array([r.a**2 for r in usable2]), np.array([-math.log(r.phat) for r in usable2]),
                         np.array([r.hits for r in usable2], dtype=float))
    witness = None if slope1 is None else bool(exps[-1] > slope1)
    config = {"tau": spec.tau, "c": spec.c, "scaling": spec.scaling.to_config(), "n_grid": grid,
              "R": R, "seed": seed}
    report = ExponentReport(rows1, used, slope1, theory, tuple(rows2), tuple(exps), tuple(bounds),
                            slope2, witness, config)
    if strict and slope1 is None:
        raise InsufficientHits(f"only {sum(used)} Type I grid point(s) with >= {MIN_HITS} hits", report=report)
    return report
