import math
import os
import subprocess
import sys

import numpy as np
import pytest

from moddev import CensoredSample, exponential, kaplan_meier, km_statistic, nelson_aalen, rng_for
from moddev import kernels

BACKENDS = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def _censored_block(R, n, seed):
    rng = rng_for(seed)
    x = rng.exponential(size=(R, n))
    c = rng.exponential(size=(R, n))
    z = np.minimum(x, c)
    d = (x <= c).astype(np.int8)
    order = np.argsort(z, axis=1, kind="stable")
    z = np.take_along_axis(z, order, axis=1)
    d = np.take_along_axis(d, order, axis=1)
    return np.ascontiguousarray(z), np.ascontiguousarray(d)


@pytest.mark.parametrize("name", BACKENDS)
def test_wilcoxon_counts_match_enumeration(name):
    be = kernels.get_backend(name)
    rng = rng_for(1)
    x = np.sort(rng.integers(0, 5, size=(50, 7)).astype(float), axis=1)
    y = np.sort(rng.integers(0, 5, size=(50, 9)).astype(float), axis=1)
    got = be.wilcoxon_counts(x, y)
    expected = [(x[r][:, None] <= y[r][None, :]).sum() for r in range(50)]
    assert got.tolist() == expected


@pytest.mark.parametrize("name", BACKENDS)
@pytest.mark.parametrize("product", [True, False])
def test_censored_sup_matches_estimators(name, product):
    be = kernels.get_backend(name)
    z, d = _censored_block(20, 40, seed=3)
    F = exponential()
    tau = 1.0
    if product:
        ref = F.cdf(z)
        ref_tau = float(F.cdf(tau))
    else:
        ref = z.copy()
        ref_tau = tau
    got = be.censored_sup(z, d, ref, ref_tau, tau, product)
    for r in range(20):
        data = CensoredSample(z[r], d[r].astype(int))
        if product:
            assert got[r] == pytest.approx(km_statistic(data, F, tau), abs=1e-13)
        else:
            L = nelson_aalen(data)
            pts = np.concatenate([[0.0, tau], z[r][z[r] <= tau]])
            dev = max(np.max(np.abs(L(pts) - pts)), np.max(np.abs(L.left_limit(pts) - pts)))
            assert got[r] == pytest.approx(dev, abs=1e-13)


@needs_cython
def test_backends_identical():
    cy, py = kernels.get_backend("cython"), kernels.get_backend("python")
    z, d = _censored_block(200, 300, seed=8)
    ref = exponential().cdf(z)
    for product in (True, False):
        a = cy.censored_sup(z, d, ref, 0.6, 1.0, product)
        b = py.censored_sup(z, d, ref, 0.6, 1.0, product)
        assert np.max(np.abs(a - b)) <= 1e-15
    rng = rng_for(2)
    x = np.sort(rng.random((100, 60)), axis=1)
    y = np.sort(rng.random((100, 80)), axis=1)
    assert np.array_equal(cy.wilcoxon_counts(x, y), py.wilcoxon_counts(x, y))


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_switch():
    env = dict(os.environ, MODDEV_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import moddev; print(moddev.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


def test_km_kernel_uses_sorted_ties_deaths_first():
    # tie between a death and a censoring: the death is processed first
    z = np.array([[1.0, 1.0, 2.0]])
    d = np.array([[1, 0, 1]], dtype=np.int8)
    km = kaplan_meier(CensoredSample(z[0], d[0].astype(int)))
    for name in BACKENDS:
        be = kernels.get_backend(name)
        got = be.censored_sup(z, d, np.zeros_like(z), 0.0, 3.0, True)
        assert got[0] == pytest.approx(max(km(1.0), km(2.0)))
        assert math.isfinite(got[0])
