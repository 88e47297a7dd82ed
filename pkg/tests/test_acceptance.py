"""The eight acceptance criteria, each at its stated tolerance and budget.

Every test records one PASS/FAIL line (see ``conftest.verdict``).  Monte
Carlo parameters are fixed here and seeds are not tuned.
"""

import math
import time
from fractions import Fraction

import numpy as np
from scipy import stats

from _cases import hadamard_cases
from moddev import (
    CensoredModel,
    CensoredSample,
    KmTestSpec,
    PsiSpec,
    Sample,
    ScoreFunction,
    StatisticSpec,
    brute_force_projection,
    check_hadamard,
    copula_problem,
    ecdf,
    error_exponents,
    estimate_tail,
    exponential,
    fit_decay,
    gaussian_finite_rate,
    kaplan_meier,
    km_cov_kernel,
    lstat_problem,
    lstat_rate,
    m_rate,
    make_scaling,
    mean_rate,
    m_root_problem,
    nelson_aalen,
    normal,
    point_mass,
    project_rate,
    quantile_problem,
    quantile_rate,
    refinement_table,
    rng_for,
    sample_scaled_errors,
    sigma2_hazard,
    sigma2_km,
    simulate_deviations,
    uniform,
    wilcoxon_count,
    wilcoxon_problem,
    wilcoxon_rate,
)
from moddev.montecarlo import STAT_KINDS

A = make_scaling("sqrt-log")
SEED = 20240


def test_ac1_projection_closed_forms(verdict):
    t0 = time.perf_counter()
    sizes = [250, 500, 1000, 2000]
    wil = refinement_table(lambda N: wilcoxon_problem(uniform(), uniform(), 0.5, N), sizes, 1.0, exact=6.0)
    qua = refinement_table(lambda N: quantile_problem(uniform(), 0.5, N), sizes, 1.0, exact=2.0)
    elapsed = time.perf_counter() - t0

    def monotone(rows):
        # error nonincreasing; the slack absorbs rounding once the error is at machine level
        e = [r["error"] for r in rows]
        return all(b <= a + 1e-12 for a, b in zip(e, e[1:]))

    ok = (wil[-1]["error"] <= 1e-3 and qua[-1]["error"] <= 1e-3
          and monotone(wil) and monotone(qua) and elapsed < 10.0)
    detail = (f"I^W(1) at N=2000 = {wil[-1]['value']:.7f} (err {wil[-1]['error']:.2e}); "
              f"quantile = {qua[-1]['value']:.12f} (err {qua[-1]['error']:.2e}); "
              f"wilcoxon errors {', '.join(format(r['error'], '.1e') for r in wil)}; {elapsed:.2f}s")
    assert verdict("AC1 projection closed forms", ok, detail), detail


def test_ac2_censored_variances(verdict):
    t0 = time.perf_counter()
    m = CensoredModel(exponential(), exponential(), 1.0)
    sh, skm = sigma2_hazard(m), sigma2_km(m)
    s0, arg = sigma2_km(CensoredModel(exponential(), point_mass(math.inf), 1.0), return_argmax=True)
    elapsed = time.perf_counter() - t0
    e_h = abs(sh - (math.e**2 - 1) / 2)
    e_km = abs(skm - (1 - math.e**-2) / 2)
    e_0 = abs(s0 - 0.25)
    e_arg = abs(arg - math.log(2))
    ok = max(e_h, e_km, e_0, e_arg) <= 1e-6 and elapsed < 1.0
    detail = (f"sigma2_hazard err {e_h:.1e}, sigma2_km err {e_km:.1e}, "
              f"uncensored sup err {e_0:.1e} at t err {e_arg:.1e}; {elapsed:.3f}s")
    assert verdict("AC2 censored variances", ok, detail), detail


def test_ac3_estimator_identities(verdict):
    rng = rng_for(SEED, 3)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 60))
        z = np.round(rng.exponential(size=n), 1)  # rounding creates ties
        km = kaplan_meier(CensoredSample(z, np.ones(n, dtype=int)))
        F = ecdf(Sample(z))
        grid = np.concatenate([np.unique(z), np.unique(z) - 0.05, [z.max() + 1]])
        worst = max(worst, float(np.max(np.abs(km(grid) - F(grid)))))
    km_ok = worst <= 1e-14

    L = nelson_aalen(CensoredSample([1.0, 2.0, 3.0], [1, 0, 1]))
    na_ok = (L.jump_points.tolist() == [1.0, 3.0] and L.jump_sizes.tolist() == [1 / 3, 1.0]
             and L(3.0) == 4 / 3)

    mismatches = 0
    for _ in range(200):
        m, k = (int(v) for v in rng.integers(1, 12, size=2))
        x = rng.integers(0, 8, size=m).astype(float)
        y = rng.integers(0, 8, size=k).astype(float)
        brute = sum(1 for a in x for b in y if a <= b)
        if Fraction(wilcoxon_count(Sample(x), Sample(y)), m * k) != Fraction(brute, m * k):
            mismatches += 1
    ok = km_ok and na_ok and mismatches == 0
    detail = f"max |KM - ECDF| = {worst:.1e}; Nelson-Aalen hand example {'exact' if na_ok else 'WRONG'}; " \
             f"Wilcoxon mismatches {mismatches}/200"
    assert verdict("AC3 estimator identities", ok, detail), detail


def test_ac4_gaussian_tail_calibration(verdict):
    t0 = time.perf_counter()
    spec = StatisticSpec("mean", normal())
    n, r, R = 100, 1.0, 100_000
    # deviations are |mean|, so the exact tail is two-sided
    p = 2 * stats.norm.sf(r * A(n))
    covered = 0
    for trial in range(100):
        est = estimate_tail(spec, n, r, A, R, seed=SEED + trial)
        covered += est.lo <= p <= est.hi
    elapsed = time.perf_counter() - t0
    ok = covered >= 93 and elapsed < 120
    detail = f"{covered}/100 Clopper-Pearson intervals cover p = {p:.6f}; {elapsed:.1f}s"
    assert verdict("AC4 Gaussian tail calibration", ok, detail), detail


def test_ac5_mdp_slopes(verdict):
    t0 = time.perf_counter()
    mean = fit_decay(StatisticSpec("mean", normal()), [7, 55, 403], 1.0, A, 1_000_000, seed=SEED)
    wil = fit_decay(StatisticSpec("wilcoxon", uniform(), uniform()), [80, 600, 4400], 0.25, A, 200_000,
                    seed=SEED)
    elapsed = time.perf_counter() - t0
    ok_mean = 0.35 <= mean.slope <= 0.65
    ok_wil = abs(wil.slope - 0.375) <= 0.5 * 0.375
    ok = ok_mean and ok_wil and elapsed < 1800
    detail = (f"mean slope {mean.slope:.4f} (band [0.35, 0.65], theory {mean.theory:.3f}); "
              f"wilcoxon slope {wil.slope:.4f} (band 0.375 +/- 50%, theory {wil.theory:.4f}); {elapsed:.1f}s")
    assert verdict("AC5 MDP slopes", ok, detail), detail


def test_ac6_clt_variances(verdict):
    t0 = time.perf_counter()
    cases = [
        ("wilcoxon", StatisticSpec("wilcoxon", uniform(), uniform()), 20_000, 1 / 12),
        ("L J=1 uniform", StatisticSpec("l-stat", uniform(), score=ScoreFunction.constant(1.0)), 10_000, 1 / 12),
        ("L J=1 exp", StatisticSpec("l-stat", exponential(), score=ScoreFunction.constant(1.0)), 10_000, 1.0),
        ("median uniform", StatisticSpec("quantile", uniform(), p=0.5), 10_000, 0.25),
        ("psi=x-theta normal", StatisticSpec("m-est", normal(), psi=PsiSpec.location(0.0, 5.0)), 10_000, 1.0),
    ]
    parts, ok = [], True
    for label, spec, n, target in cases:
        z = sample_scaled_errors(spec, n, 10_000, seed=SEED)
        v = float(np.var(z, ddof=1))
        rel = abs(v - target) / target
        ok &= rel <= 0.05
        parts.append(f"{label} {v:.4f}/{target:.4f} ({100 * rel:.1f}%)")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 600
    detail = "; ".join(parts) + f"; {elapsed:.1f}s"
    assert verdict("AC6 CLT variances", ok, detail), detail


def test_ac7_test_exponents(verdict):
    t0 = time.perf_counter()
    spec = KmTestSpec(exponential(), exponential(2.0), exponential(), 1.0, 0.5, A)
    rep = error_exponents(spec, [50, 200, 1000, 5000], 20_000, seed=SEED)
    elapsed = time.perf_counter() - t0
    theory_ok = abs(rep.type1_theory - 0.25 / (2 * 0.432332)) <= 1e-6
    slope_ok = rep.type1_slope is not None and abs(rep.type1_slope - rep.type1_theory) <= 0.5 * rep.type1_theory
    ok = theory_ok and slope_ok and bool(rep.witness) and elapsed < 1800
    bound = " (1/R bound)" if rep.type2_bound_only[-1] else ""
    detail = (f"Type I slope {rep.type1_slope:.4f} vs theory {rep.type1_theory:.4f}; "
              f"Type II exponent at n=5000 {rep.type2_exponents[-1]:.4f}{bound}; witness {rep.witness}; "
              f"{elapsed:.1f}s")
    assert verdict("AC7 test exponents", ok, detail), detail


def test_ac8_property_suites(verdict):
    rng = rng_for(SEED, 8)
    parts, ok = [], True

    # quadratic homogeneity, 10^3 cases
    exp_model = CensoredModel(exponential(), exponential(), 1.0)
    K = km_cov_kernel(exp_model)
    rates = [
        lambda x: wilcoxon_rate(0.4, 0.07, 0.09, x),
        lambda x: quantile_rate(normal(), 0.3, x),
        lambda x: lstat_rate(ScoreFunction.trimmed_mean(0.1, 0.9), uniform(), x),
        lambda x: mean_rate(exponential(2.0), x),
        lambda x: m_rate(np.array([[1.5, 0.2], [0.1, 0.8]]), np.array([[2.0, 0.4], [0.4, 1.0]]), [x, 2 * x]),
        lambda x: gaussian_finite_rate(K, [0.3, 1.0], [x, -0.5 * x]),
    ]
    worst = 0.0
    for case in range(1000):
        rate = rates[case % len(rates)]
        x, c = rng.uniform(-10, 10), rng.uniform(-10, 10)
        lhs, rhs = rate(c * x), c**2 * rate(x)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    ok &= worst <= 1e-9
    parts.append(f"homogeneity worst rel {worst:.1e}")

    # derivative linearity and Hadamard checks on the six kinds
    cases = hadamard_cases()
    lin = 0.0
    for _, op, _ in cases:
        for _ in range(20):
            h1 = [rng.normal(size=b.nodes.shape[0]) for b in op.blocks]
            h2 = [rng.normal(size=b.nodes.shape[0]) for b in op.blocks]
            a, b = rng.normal(size=2)
            pack = tuple if len(h1) > 1 else (lambda hs: hs[0])
            lhs = np.asarray(op.apply(pack([a * u + b * v for u, v in zip(h1, h2)])))
            rhs = a * np.asarray(op.apply(pack(h1))) + b * np.asarray(op.apply(pack(h2)))
            lin = max(lin, float(np.max(np.abs(lhs - rhs))) / (1.0 + float(np.max(np.abs(rhs)))))
    ok &= lin <= 1e-10
    parts.append(f"linearity worst {lin:.1e}")
    failed = [name for name, op, h in cases if not check_hadamard(op, h).passed]
    ok &= not failed
    parts.append(f"hadamard {6 - len(failed)}/6 kinds pass")

    # brute-force oracle at N <= 25
    problems = [
        wilcoxon_problem(normal(), exponential(), 0.4, 12),
        quantile_problem(exponential(), 0.3, 25),
        lstat_problem(ScoreFunction.polynomial([1.0, 1.0]), uniform(), 25),
        m_root_problem(PsiSpec.huber(1.0, 0.0, 4.0), normal(), 25, n_nodes=31),
        copula_problem(5, [(0.3, 0.6)], grid_size=4),
    ]
    orc = 0.0
    for rate, op in problems:
        for y in (0.5, -1.3):
            fast, slow = project_rate(rate, op, y), brute_force_projection(rate, op, y)
            orc = max(orc, abs(fast - slow) / max(1.0, abs(slow)))
    ok &= orc <= 1e-8
    parts.append(f"oracle worst rel {orc:.1e}")

    # byte-identical outputs across 1/4/16 workers
    specs = {
        "mean": StatisticSpec("mean", normal()),
        "wilcoxon": StatisticSpec("wilcoxon", uniform(), uniform()),
        "quantile": StatisticSpec("quantile", exponential(), p=0.5),
        "l-stat": StatisticSpec("l-stat", uniform(), score=ScoreFunction.trimmed_mean(0.1, 0.9)),
        "m-est": StatisticSpec("m-est", normal(), psi=PsiSpec.huber(1.0, 0.0, 5.0)),
        "nelson-aalen-sup": StatisticSpec("nelson-aalen-sup", exponential(), exponential(), tau=1.0),
        "km-sup": StatisticSpec("km-sup", exponential(), exponential(), tau=1.0),
    }
    assert set(specs) == set(STAT_KINDS)
    differ = []
    for kind, spec in specs.items():
        outs = {w: simulate_deviations(spec, 300, 5000, seed=SEED, workers=w).tobytes() for w in (1, 4, 16)}
        if len(set(outs.values())) != 1:
            differ.append(kind)
    reps = {w: fit_decay(specs["mean"], [20, 60, 180], 0.5, A, 20_000, seed=SEED, workers=w).csv_rows()
            for w in (1, 4, 16)}
    if not reps[1] == reps[4] == reps[16]:
        differ.append("fit_decay")
    ok &= not differ
    parts.append(f"determinism {'identical' if not differ else 'differs for ' + ', '.join(differ)}")

    detail = "; ".join(parts)
    assert verdict("AC8 property suites", ok, detail), detail
