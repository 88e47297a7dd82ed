# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo kernels; they release the GIL so threads scale."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def wilcoxon_counts(const double[:, ::1] x, const double[:, ::1] y):
    """Per row, #{(i, j): x_i <= y_j} for row-sorted x and y (merge count)."""
    cdef Py_ssize_t reps = x.shape[0], m = x.shape[1], n = y.shape[1]
    cdef Py_ssize_t r, i, j
    cdef cnp.int64_t total
    out = np.empty(reps, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    if y.shape[0] != reps:
        raise ValueError("x and y need the same number of rows")
    with nogil:
        for r in range(reps):
            i = 0
            total = 0
            for j in range(n):
                while i < m and x[r, i] <= y[r, j]:
                    i += 1
                total += i
            o[r] = total
    return out


def censored_sup(const double[:, ::1] z, const signed char[:, ::1] d,
                 const double[:, ::1] ref, double ref_tau, double tau, bint product):
    """Per row, sup over [0, tau] of |estimate - ref| for KM (product) or Nelson-Aalen.

    Rows are sorted by time with deaths before censorings at ties; ``ref``
    holds the (continuous) reference evaluated at each time.  The sup is
    taken over every jump, its left limit and tau.
    """
    cdef Py_ssize_t reps = z.shape[0], n = z.shape[1]
    cdef Py_ssize_t r, i
    cdef double surv, cur, best, dev
    out = np.empty(reps, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for r in range(reps):
            surv = 1.0
            cur = 0.0
            best = 0.0
            for i in range(n):
                if z[r, i] > tau:
                    break
                dev = fabs(cur - ref[r, i])
                if dev > best:
                    best = dev
                if d[r, i]:
                    if product:
                        surv = surv * (1.0 - 1.0 / <double>(n - i))
                        cur = 1.0 - surv
                    else:
                        cur = cur + 1.0 / <double>(n - i)
                    dev = fabs(cur - ref[r, i])
                    if dev > best:
                        best = dev
            dev = fabs(cur - ref_tau)
            if dev > best:
                best = dev
            o[r] = best
    return out
