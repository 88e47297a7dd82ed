"""Compare the compiled and numpy kernels on Monte Carlo sized blocks.

Usage: python benchmarks/bench_kernels.py [--rows 256] [--n 2000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from moddev import kernels


def _blocks(rows: int, n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.random((rows, n)), axis=1)
    y = np.sort(rng.random((rows, n)), axis=1)
    t = rng.exponential(size=(rows, n))
    c = rng.exponential(size=(rows, n))
    z = np.minimum(t, c)
    d = (t <= c).astype(np.int8)
    order = np.argsort(z, axis=1, kind="stable")
    z = np.ascontiguousarray(np.take_along_axis(z, order, axis=1))
    d = np.ascontiguousarray(np.take_along_axis(d, order, axis=1))
    ref = 1.0 - np.exp(-z)
    return x, y, z, d, ref


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=256)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    x, y, z, d, ref = _blocks(args.rows, args.n)
    ref_tau = 1.0 - np.exp(-1.0)
    print(f"block {args.rows} x {args.n}, best of {args.repeat}")
    print(f"{'kernel':<22}{'backend':<10}{'ms':>10}")
    timings = {}
    for name in kernels.available_backends():
        be = kernels.get_backend(name)
        jobs = {
            "wilcoxon_counts": lambda: be.wilcoxon_counts(x, y),
            "km_sup": lambda: be.censored_sup(z, d, ref, ref_tau, 1.0, True),
            "nelson_aalen_sup": lambda: be.censored_sup(z, d, z, 1.0, 1.0, False),
        }
        for job, fn in jobs.items():
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            timings[job, name] = best
            print(f"{job:<22}{name:<10}{1e3 * best:>10.2f}")
    if "cython" in kernels.available_backends():
        for job in ("wilcoxon_counts", "km_sup", "nelson_aalen_sup"):
            print(f"speed-up {job}: {timings[job, 'python'] / timings[job, 'cython']:.1f}x")


if __name__ == "__main__":
    main()
