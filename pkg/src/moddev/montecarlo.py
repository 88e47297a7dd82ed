"""Monte Carlo tail probabilities under moderate-deviation scaling.

Replicates are generated in fixed blocks; block ``b`` at sample size ``n``
draws from the stream keyed by ``(seed, 3, n, b)``.  The block size is a
function of ``n`` only, so any assignment of blocks to worker threads gives
the same deviations in the same order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from . import kernels
from .distributions import DistributionSpec
from .errors import InsufficientHits, ModelError
from .estimators import PsiSpec, ScoreFunction, bracketed_root, l_weights, quantile_index
from .rates import (
    CensoredModel,
    hazard_sup_rate,
    km_sup_rate,
    lstat_mean,
    lstat_rate,
    lstat_variance,
    m_model_terms,
    m_rate,
    mean_rate,
    model_variances,
    quantile_rate,
    wilcoxon_center,
    wilcoxon_rate,
)
from .samples import rng_for
from .scaling import ScalingSequence

__all__ = [
    "STAT_KINDS",
    "StatisticSpec",
    "TailEstimate",
    "DecayReport",
    "two_sample_schedule",
    "simulate_deviations",
    "sample_scaled_errors",
    "estimate_tail",
    "fit_decay",
    "clopper_pearson",
    "block_size",
]

STAT_KINDS = ("wilcoxon", "nelson-aalen-sup", "km-sup", "quantile", "l-stat", "m-est", "mean")
CENSORED_KINDS = ("nelson-aalen-sup", "km-sup")
_STREAM = 3
MIN_HITS = 10


def block_size(n_total: int) -> int:
    """Replicates per seeding block: about 2**21 draws, between 16 and 1024."""
    return int(min(1024, max(16, (1 << 21) // max(int(n_total), 1))))


def two_sample_schedule(lam: float, total_grid) -> list[tuple[int, int]]:
    """(m, n) = (round(lam N), N - round(lam N)) for each total N."""
    if not 0.0 < lam < 1.0:
        raise ModelError("lambda must lie in (0, 1)")
    out = []
    for N in np.atleast_1d(total_grid):
        m = int(round(lam * int(N)))
        n = int(N) - m
        if m < 1 or n < 1:
            raise ModelError(f"degenerate split for N={int(N)}: (m, n) = ({m}, {n})")
        out.append((m, n))
    return out


@dataclass(frozen=True)
class StatisticSpec:
    """A statistic, its model and its analytic centering.

    ``G`` is the second sample law for ``wilcoxon`` and the censoring law for
    the censored kinds.  ``reference`` (censored kinds) is the law the
    estimate is compared with; it defaults to ``F``.  For ``wilcoxon`` the
    sample size passed to the simulators is the total m + n with
    m = round(lam (m + n)).
    """

    kind: str
    F: DistributionSpec
    G: DistributionSpec | None = None
    tau: float | None = None
    p: float | None = None
    score: ScoreFunction | None = None
    psi: PsiSpec | None = None
    lam: float = 0.5
    reference: DistributionSpec | None = None

    def __post_init__(self):
        if self.kind not in STAT_KINDS:
            raise ModelError(f"unknown statistic kind {self.kind!r}")
        need = {
            "wilcoxon": ("G",),
            "nelson-aalen-sup": ("G", "tau"),
            "km-sup": ("G", "tau"),
            "quantile": ("p",),
            "l-stat": ("score",),
            "m-est": ("psi",),
            "mean": (),
        }[self.kind]
        for name in need:
            if getattr(self, name) is None:
                raise ModelError(f"{self.kind} statistic needs {name}")
        if self.kind in CENSORED_KINDS:
            ref = self.reference or self.F
            if not ref.is_continuous:
                raise ModelError("sup-deviation simulation needs a continuous reference law")
            CensoredModel(self.F, self.G, self.tau)  # validates H(tau) < 1
        if self.kind == "quantile" and not 0 < self.p < 1:
            raise ModelError("p must lie in (0, 1)")
        if self.kind == "wilcoxon" and not 0 < self.lam < 1:
            raise ModelError("lambda must lie in (0, 1)")

    # sizes and centering

    def sizes(self, n: int) -> tuple[tuple[int, ...], float]:
        """Per-sample sizes and the effective n of the speed a^2(n_eff)."""
        n = int(n)
        if n < 1:
            raise ModelError("n must be >= 1")
        if self.kind == "wilcoxon":
            ((m, k),) = two_sample_schedule(self.lam, [n])
            return (m, k), m * k / (m + k)
        return (n,), float(n)

    @cached_property
    def truth(self):
        """Analytic centering: a number, or the reference law for sup kinds."""
        k = self.kind
        if k == "mean":
            return self.F.mean()
        if k == "wilcoxon":
            return wilcoxon_center(self.F, self.G)
        if k == "quantile":
            return float(self.F.quantile(self.p))
        if k == "l-stat":
            return lstat_mean(self.score, self.F)
        if k == "m-est":
            return m_model_terms(self.psi, self.F)[0]
        return self.reference or self.F

    def asymptotic_variance(self) -> float:
        """Variance of the Gaussian limit of sqrt(n_eff) (estimator - truth), scalar kinds."""
        k = self.kind
        if k == "mean":
            return self.F.variance()
        if k == "wilcoxon":
            vfy, vgx = model_variances(self.F, self.G)
            return self.lam * vfy + (1 - self.lam) * vgx
        if k == "quantile":
            dens = float(self.F.pdf(self.F.quantile(self.p)))
            return self.p * (1 - self.p) / dens**2
        if k == "l-stat":
            return lstat_variance(self.score, self.F)
        if k == "m-est":
            _, A, gamma = m_model_terms(self.psi, self.F)
            return gamma / A**2
        raise ModelError(f"{k} has a sup-norm deviation, not a scalar variance")

    def theoretical_rate(self, r: float) -> float | None:
        """Rate of the event sqrt(n_eff)/a(n_eff) * deviation >= r, if closed form exists."""
        k = self.kind
        if k == "mean":
            return float(mean_rate(self.F, r))
        if k == "wilcoxon":
            vfy, vgx = model_variances(self.F, self.G)
            return float(wilcoxon_rate(self.lam, vfy, vgx, r))
        if k == "quantile":
            return float(quantile_rate(self.F, self.p, r))
        if k == "l-stat":
            return float(lstat_rate(self.score, self.F, r))
        if k == "m-est":
            _, A, gamma = m_model_terms(self.psi, self.F)
            return m_rate(A, gamma, r)
        if self.reference is not None and self.reference != self.F:
            return None
        model = CensoredModel(self.F, self.G, self.tau)
        if k == "nelson-aalen-sup":
            return float(hazard_sup_rate(model, r))
        return float(km_sup_rate(model, r))

    def label(self) -> str:
        return self.kind

    def to_config(self) -> dict:
        out = {"kind": self.kind}
        if self.tau is not None:
            out["tau"] = repr(self.tau)
        if self.p is not None:
            out["p"] = repr(self.p)
        if self.kind == "wilcoxon":
            out["lambda"] = repr(self.lam)
        return out


# ---------------------------------------------------------------------------
# per-block simulation


def _block_values(spec: StatisticSpec, n: int, B: int, rng: np.random.Generator, signed: bool) -> np.ndarray:
    """Estimator minus truth (signed) or the deviation, for B replicates."""
    k = spec.kind
    (sizes, _) = spec.sizes(n)
    if k == "mean":
        x = spec.F.sample((B, n), rng)
        diff = x.mean(axis=1) - spec.truth
    elif k == "quantile":
        x = spec.F.sample((B, n), rng)
        j = quantile_index(n, spec.p) - 1
        diff = np.partition(x, j, axis=1)[:, j] - spec.truth
    elif k == "l-stat":
        x = np.sort(spec.F.sample((B, n), rng), axis=1)
        diff = x @ l_weights(n, spec.score) - spec.truth
    elif k == "m-est":
        diff = _m_block(spec, spec.F.sample((B, n), rng)) - spec.truth
    elif k == "wilcoxon":
        m, k2 = sizes
        x = np.sort(spec.F.sample((B, m), rng), axis=1)
        y = np.sort(spec.G.sample((B, k2), rng), axis=1)
        diff = kernels.wilcoxon_counts(x, y) / (m * k2) - spec.truth
    else:
        return _censored_block(spec, n, B, rng)
    return diff if signed else np.abs(diff)


def _m_block(spec: StatisticSpec, x: np.ndarray) -> np.ndarray:
    """Vectorised M-estimates; replicates without a root in the box give nan."""
    psi = spec.psi
    lo, hi = psi.center - psi.radius, psi.center + psi.radius
    B = x.shape[0]

    def fun_rows(rows):
        def fun(t):
            return np.mean(psi.psi(x[rows], np.asarray(t)[:, None]), axis=1)
        return fun

    all_rows = np.arange(B)
    f_lo = fun_rows(all_rows)(np.full(B, lo))
    f_hi = fun_rows(all_rows)(np.full(B, hi))
    ftol = 1e-10 * (1.0 + np.abs(fun_rows(all_rows)(np.full(B, psi.center))))
    ok = (np.sign(f_lo) * np.sign(f_hi) <= 0)
    out = np.full(B, np.nan)
    rows = all_rows[ok]
    if rows.size:
        root, _ = bracketed_root(fun_rows(rows), np.full(rows.size, lo), np.full(rows.size, hi),
                                 f_lo[ok], f_hi[ok], ftol=ftol[ok])
        out[rows] = root
    return out


def _censored_block(spec: StatisticSpec, n: int, B: int, rng: np.random.Generator) -> np.ndarray:
    x = spec.F.sample((B, n), rng)
    c = spec.G.sample((B, n), rng)
    z = np.minimum(x, c)
    d = (x <= c).astype(np.int8)
    # time order, deaths before censorings at ties
    order = np.lexsort((1 - d, z), axis=1)
    z = np.ascontiguousarray(np.take_along_axis(z, order, axis=1))
    d = np.ascontiguousarray(np.take_along_axis(d, order, axis=1))
    ref = spec.truth
    if spec.kind == "km-sup":
        rz, rt = ref.cdf(z), float(ref.cdf(spec.tau))
    else:
        with np.errstate(divide="ignore"):
            rz, rt = -np.log1p(-ref.cdf(z)), float(-np.log1p(-ref.cdf(spec.tau)))
    rz = np.ascontiguousarray(rz, dtype=float)
    return kernels.censored_sup(z, d, rz, rt, float(spec.tau), spec.kind == "km-sup")


def _run_blocks(spec: StatisticSpec, n: int, R: int, seed: int, workers: int, signed: bool,
                stream: int = _STREAM) -> np.ndarray:
    if R < 1:
        raise ModelError("R must be >= 1")
    sizes, _ = spec.sizes(n)
    bs = block_size(sum(sizes))
    counts = [min(bs, R - start) for start in range(0, R, bs)]

    def job(b):
        return _block_values(spec, n, counts[b], rng_for(seed, stream, int(n), b), signed)

    if workers <= 1 or len(counts) == 1:
        parts = [job(b) for b in range(len(counts))]
    else:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(job, range(len(counts))))
    return np.concatenate(parts)


def simulate_deviations(spec: StatisticSpec, n: int, R: int, seed: int, workers: int = 1,
                        stream: int = _STREAM) -> np.ndarray:
    """Unscaled deviations |estimate - truth| (sup-norm for censored kinds).

    An M-estimation replicate whose estimating equation has no root in the
    box gets deviation +inf.  ``stream`` selects an independent family of
    random streams (used to keep null and alternative draws apart).
    """
    dev = _run_blocks(spec, n, R, seed, workers, signed=False, stream=stream)
    return np.where(np.isnan(dev), np.inf, dev)


def sample_scaled_errors(spec: StatisticSpec, n: int, R: int, seed: int, workers: int = 1) -> np.ndarray:
    """sqrt(n_eff) (estimate - truth) per replicate (scalar kinds)."""
    if spec.kind in CENSORED_KINDS:
        raise ModelError("signed errors are defined for scalar statistics only")
    _, n_eff = spec.sizes(n)
    return math.sqrt(n_eff) * _run_blocks(spec, n, R, seed, workers, signed=True)


# ---------------------------------------------------------------------------
# tail estimates and decay fits


def clopper_pearson(k: int, R: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, R - k + 1))
    hi = 1.0 if k == R else float(stats.beta.ppf(1 - a / 2, k + 1, R - k))
    return lo, hi


@dataclass(frozen=True)
class TailEstimate:
    n: int
    n_eff: float
    a: float
    R: int
    hits: int
    phat: float
    lo: float
    hi: float

    @property
    def bound_only(self) -> bool:
        """No hits: only the bound p < 1/R is informative."""
        return self.hits == 0

    def to_dict(self) -> dict:
        return {"n": self.n, "n_eff": self.n_eff, "a2": self.a**2, "R": self.R, "hits": self.hits,
                "phat": self.phat, "lo": self.lo, "hi": self.hi}


def estimate_tail(spec: StatisticSpec, n: int, r: float, scaling: ScalingSequence, R: int, seed: int,
                  workers: int = 1, deviations: np.ndarray | None = None) -> TailEstimate:
    """p_hat = #{sqrt(n_eff)/a(n_eff) * deviation >= r} / R with a 95% Clopper-Pearson interval."""
    if r < 0 or math.isnan(r):
        raise ModelError("r must be non-negative")
    _, n_eff = spec.sizes(n)
    a = float(scaling(n_eff))
    if r == 0:
        hits = R
    elif math.isinf(r):
        hits = 0
    else:
        dev = simulate_deviations(spec, n, R, seed, workers) if deviations is None else deviations
        hits = int(np.count_nonzero(math.sqrt(n_eff) / a * dev >= r))
    lo, hi = clopper_pearson(hits, R)
    return TailEstimate(int(n), n_eff, a, int(R), hits, hits / R, lo, hi)


@dataclass(frozen=True)
class DecayReport:
    label: str
    r: float
    rows: tuple
    used: tuple
    slope: float | None
    intercept: float | None
    theory: float | None
    config: dict = field(default_factory=dict)

    @property
    def rel_error(self) -> float | None:
        if self.slope is None or not self.theory:
            return None
        return abs(self.slope - self.theory) / self.theory

    def csv_rows(self) -> list[dict]:
        return [row.to_dict() | {"used": int(u)} for row, u in zip(self.rows, self.used)]

    def summary(self) -> dict:
        return {"statistic": self.label, "r": self.r, "slope": self.slope, "intercept": self.intercept,
                "theory": self.theory, "rel_error": self.rel_error,
                "points_used": int(sum(self.used)), "config": self.config}


def _wls(x, y, w) -> tuple[float, float]:
    X = np.column_stack([np.ones_like(x), x])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return float(coef[1]), float(coef[0])


def fit_decay(spec: StatisticSpec, n_grid, r: float, scaling: ScalingSequence, R: int, seed: int,
              workers: int = 1, theory: float | None = None) -> DecayReport:
    """Slope of -log p_hat against a^2(n_eff) by least squares weighted with hit counts.

    Grid points with fewer than 10 hits are excluded; fewer than three
    usable points raise InsufficientHits carrying the partial report.
    """
    grid = [int(v) for v in np.atleast_1d(n_grid)]
    if len(grid) < 3 or any(b <= a for a, b in zip(grid[:-1], grid[1:])):
        raise ModelError("n_grid must be increasing with at least 3 points")
    if theory is None:
        theory = spec.theoretical_rate(r)
    rows = tuple(estimate_tail(spec, n, r, scaling, R, seed, workers) for n in grid)
    used = tuple(row.hits >= MIN_HITS for row in rows)
    slope = intercept = None
    if sum(used) >= 3:
        pick = [row for row, u in zip(rows, used) if u]
        x = np.array([row.a**2 for row in pick])
        y = np.array([-math.log(row.phat) for row in pick])
        w = np.array([row.hits for row in pick], dtype=float)
        slope, intercept = _wls(x, y, w)
        slope = 0.0 if slope == 0 else slope  # no negative zero in reports
    config = {"statistic": spec.to_config(), "scaling": scaling.to_config(), "n_grid": grid,
              "r": r, "R": R, "seed": seed}
    report = DecayReport(spec.label(), float(r), rows, used, slope, intercept, theory, config)
    if slope is None:
        raise InsufficientHits(f"only {sum(used)} grid point(s) with >= {MIN_HITS} hits", report=report)
    return report
