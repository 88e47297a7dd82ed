import math

import numpy as np
import pytest
from scipy import stats

from moddev import (
    InsufficientHits,
    ModelError,
    PsiSpec,
    ScoreFunction,
    StatisticSpec,
    block_size,
    clopper_pearson,
    estimate_tail,
    exponential,
    fit_decay,
    make_scaling,
    normal,
    sample_scaled_errors,
    simulate_deviations,
    two_sample_schedule,
    uniform,
)

A = make_scaling("sqrt-log")

SPECS = {
    "mean": StatisticSpec("mean", normal()),
    "wilcoxon": StatisticSpec("wilcoxon", uniform(), uniform()),
    "quantile": StatisticSpec("quantile", exponential(), p=0.5),
    "l-stat": StatisticSpec("l-stat", uniform(), score=ScoreFunction.trimmed_mean(0.1, 0.9)),
    "m-est": StatisticSpec("m-est", normal(), psi=PsiSpec.huber(1.0, 0.0, 5.0)),
    "nelson-aalen-sup": StatisticSpec("nelson-aalen-sup", exponential(), exponential(), tau=1.0),
    "km-sup": StatisticSpec("km-sup", exponential(), exponential(), tau=1.0),
}


class TestHelpers:
    def test_schedule(self):
        assert two_sample_schedule(0.5, [100]) == [(50, 50)]
        assert two_sample_schedule(0.3, [10]) == [(3, 7)]
        with pytest.raises(ModelError):
            two_sample_schedule(0.001, [10])

    def test_block_size(self):
        assert block_size(1) == 1024 and block_size(10**8) == 16
        assert block_size(4096) == 512

    def test_clopper_pearson(self):
        lo, hi = clopper_pearson(0, 100)
        assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / 100))
        lo, hi = clopper_pearson(7, 50)
        assert lo == pytest.approx(stats.beta.ppf(0.025, 7, 44)) and hi == pytest.approx(stats.beta.ppf(0.975, 8, 43))

    def test_spec_validation(self):
        with pytest.raises(ModelError):
            StatisticSpec("quantile", normal())
        with pytest.raises(ModelError):
            StatisticSpec("bogus", normal())


class TestTail:
    def test_r_zero(self):
        assert estimate_tail(SPECS["mean"], 50, 0.0, A, 1000, seed=1).phat == 1.0

    def test_r_infinite(self):
        assert estimate_tail(SPECS["mean"], 50, math.inf, A, 1000, seed=1).phat == 0.0

    def test_gaussian_tail(self):
        n, r, R = 400, 3.0, 20_000
        est = estimate_tail(SPECS["mean"], n, r, A, R, seed=5)
        p = 2 * stats.norm.sf(r * A(n))
        assert est.lo <= p <= est.hi

    def test_gaussian_tail_moderate(self):
        n, r, R = 100, 1.0, 50_000
        est = estimate_tail(SPECS["mean"], n, r, A, R, seed=8)
        p = 2 * stats.norm.sf(r * A(n))
        assert est.lo <= p <= est.hi


class TestDeterminism:
    @pytest.mark.parametrize("kind", sorted(SPECS))
    def test_workers(self, kind):
        spec = SPECS[kind]
        n = 200 if kind != "wilcoxon" else 400
        base = simulate_deviations(spec, n, 3000, seed=17, workers=1)
        for w in (4, 16):
            assert simulate_deviations(spec, n, 3000, seed=17, workers=w).tobytes() == base.tobytes()

    def test_seed_changes_output(self):
        a = simulate_deviations(SPECS["mean"], 50, 100, seed=1)
        b = simulate_deviations(SPECS["mean"], 50, 100, seed=2)
        assert not np.array_equal(a, b)

    def test_prefix_stability(self):
        # replicate r depends on the block it falls in, not on R
        a = simulate_deviations(SPECS["mean"], 50, 3000, seed=3)
        b = simulate_deviations(SPECS["mean"], 50, 5000, seed=3)
        assert np.array_equal(a, b[:3000])


class TestClt:
    @pytest.mark.parametrize("kind", ["mean", "wilcoxon", "quantile", "l-stat", "m-est"])
    def test_variance(self, kind):
        spec = SPECS[kind]
        n = 2000 if kind != "wilcoxon" else 4000
        z = sample_scaled_errors(spec, n, 4000, seed=23)
        assert np.var(z) == pytest.approx(spec.asymptotic_variance(), rel=0.1)

    def test_censored_kinds_nonnegative(self):
        d = simulate_deviations(SPECS["km-sup"], 100, 500, seed=2)
        assert np.all(d >= 0)


class TestDecay:
    def test_slope_zero_for_r_zero(self):
        rep = fit_decay(SPECS["mean"], [20, 50, 100], 0.0, A, 200, seed=1)
        assert rep.slope == pytest.approx(0.0, abs=1e-12)

    def test_insufficient_hits(self):
        with pytest.raises(InsufficientHits) as exc:
            fit_decay(SPECS["mean"], [20, 50, 100], 50.0, A, 200, seed=1)
        assert exc.value.report is not None
        assert exc.value.report.slope is None

    def test_theory_attached(self):
        rep = fit_decay(SPECS["wilcoxon"], [40, 80, 160], 0.25, A, 500, seed=3)
        assert rep.theory == pytest.approx(0.375, rel=1e-12)
        assert rep.csv_rows()[0].keys() >= {"n", "a2", "R", "hits", "phat", "lo", "hi"}

    def test_mean_slope_small(self):
        rep = fit_decay(SPECS["mean"], [7, 55, 403], 1.0, A, 100_000, seed=9)
        assert 0.35 <= rep.slope <= 0.65
