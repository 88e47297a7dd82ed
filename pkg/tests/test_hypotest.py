import math

import numpy as np
import pytest

from moddev import (
    CensoredSample,
    KmTestSpec,
    ModelError,
    asymptotic_level,
    error_exponents,
    exponential,
    km_statistic,
    km_test,
    make_scaling,
    point_mass,
    sample_censored,
    theoretical_type1_exponent,
    uniform,
)

A = make_scaling("sqrt-log")
S2 = (1 - math.exp(-2)) / 2


def _spec(c, F1=None, **kw):
    return KmTestSpec(exponential(), F1 or exponential(2.0), exponential(), 1.0, c, A, **kw)


class TestStatistic:
    def test_single_point_uniform(self):
        T = km_statistic(CensoredSample([0.5], [1]), uniform(), 1.0)
        assert T == pytest.approx(0.5, abs=1e-15)

    def test_matches_dense_grid(self):
        data = sample_censored(exponential(), exponential(), 60, seed=4)
        T = km_statistic(data, exponential(), 1.0)
        from moddev import kaplan_meier

        km = kaplan_meier(data)
        grid = np.linspace(0, 1, 200_001)
        dense = np.max(np.abs(km(grid) - exponential().cdf(grid)))
        assert dense <= T + 1e-15
        assert T - dense < 1e-4

    def test_huge_threshold_accepts(self):
        data = sample_censored(exponential(), exponential(), 100, seed=1)
        assert not km_test(data, _spec(1e6)).reject

    def test_zero_threshold_rejects(self):
        data = sample_censored(exponential(), exponential(), 100, seed=1)
        assert km_test(data, _spec(0.0)).reject


class TestExponent:
    def test_value(self):
        assert theoretical_type1_exponent(_spec(1.0)) == pytest.approx(1 / (2 * S2), abs=1e-8)
        assert theoretical_type1_exponent(_spec(1.0)) == pytest.approx(1.156518, abs=1e-6)

    def test_zero_and_quadratic(self):
        assert theoretical_type1_exponent(_spec(0.0)) == 0.0
        assert theoretical_type1_exponent(_spec(2.0)) == pytest.approx(4 * theoretical_type1_exponent(_spec(1.0)),
                                                                       rel=1e-14)

    def test_level(self):
        assert asymptotic_level(_spec(1.0), 100) == pytest.approx(math.exp(-math.log(100) * 1.156518), rel=1e-5)


class TestSpecValidation:
    def test_separation(self):
        with pytest.raises(ModelError):
            _spec(0.5, F1=exponential())

    def test_separation_can_be_waived(self):
        assert _spec(0.5, F1=exponential(), check_separation=False).c == 0.5

    def test_at_risk(self):
        with pytest.raises(ModelError):
            KmTestSpec(uniform(), uniform(0, 2), point_mass(math.inf), 1.0, 0.5, A)


class TestErrorExponents:
    def test_zero_accepts_are_bounds(self):
        rep = error_exponents(_spec(0.05), [100, 300, 1000], 2000, seed=1)
        assert rep.type2_bound_only[-1]
        assert rep.type2_rows[-1].hits == 0
        assert rep.type2_exponents[-1] == pytest.approx(math.log(2000) / A(1000) ** 2)

    def test_huge_c_type1_bounds(self):
        rep = error_exponents(_spec(1e6), [100, 300, 1000], 500, seed=1)
        assert all(r.hits == 0 for r in rep.type1_rows)
        assert rep.type1_slope is None and rep.witness is None

    def test_strict(self):
        from moddev import InsufficientHits

        with pytest.raises(InsufficientHits):
            error_exponents(_spec(1e6), [100, 300, 1000], 500, seed=1, strict=True)

    def test_null_alternative(self):
        # F1 = F0: acceptance probability tends to 1, Type II slope near 0
        spec = _spec(0.5, F1=exponential(), check_separation=False)
        rep = error_exponents(spec, [50, 200, 1000], 4000, seed=7)
        betas = [r.phat for r in rep.type2_rows]
        assert betas[-1] > 0.8
        assert abs(rep.type2_slope) < 0.3

    def test_rows(self):
        rep = error_exponents(_spec(0.5), [50, 100, 200], 1000, seed=2)
        rows = rep.csv_rows()
        assert len(rows) == 3 and rows[0]["R"] == 1000
        assert rep.summary()["type1_theory"] == pytest.approx(0.25 / (2 * S2), rel=1e-8)
