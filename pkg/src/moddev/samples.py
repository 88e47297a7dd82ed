"""Sample containers, seeded samplers and CSV readers.

Seeding
-------
Every random draw is keyed by a 64-bit master seed plus a tuple of integer
counters (stream, block, ...).  The key is mixed by numpy's
``SeedSequence`` (a counter-based hash), so the stream consumed by block
``b`` does not depend on which worker runs it or in what order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .distributions import DistributionSpec
from .errors import ModelError

__all__ = [
    "Sample",
    "CensoredSample",
    "PairedSample",
    "rng_for",
    "sample",
    "sample_censored",
    "sample_paired",
    "read_sample_csv",
    "read_censored_csv",
    "read_paired_csv",
]


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key); stable across numpy versions."""
    if seed is None or int(seed) < 0:
        raise ModelError("a non-negative integer seed is required")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Sample:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise ModelError("empty sample")
        if np.any(np.isnan(v)):
            raise ModelError("sample contains NaN")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class CensoredSample:
    """Right-censored observations: times z >= 0 and event flags (1 = observed failure)."""

    times: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.times, dtype=float).ravel()
        d = np.asarray(self.events).ravel()
        if z.size == 0:
            raise ModelError("empty censored sample")
        if z.shape != d.shape:
            raise ModelError("times and events differ in length")
        if np.any(np.isnan(z)) or np.any(z < 0):
            raise ModelError("censored times must be non-negative")
        if not np.all((d == 0) | (d == 1)):
            raise ModelError("event flags must be 0 or 1")
        d = d.astype(np.int8)
        z.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "times", z)
        object.__setattr__(self, "events", d)

    @property
    def n(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class PairedSample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if x.size == 0 or x.shape != y.shape:
            raise ModelError("paired sample needs equal, non-zero lengths")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.size


def sample(dist: DistributionSpec, n: int, seed: int) -> Sample:
    if n < 1:
        raise ModelError("n must be >= 1")
    return Sample(dist.sample(n, rng_for(seed, 0)))


def sample_censored(dist_f: DistributionSpec, dist_g: DistributionSpec, n: int, seed: int) -> CensoredSample:
    """Draw X ~ F and C ~ G independently and observe (min(X, C), 1{X <= C})."""
    if n < 1:
        raise ModelError("n must be >= 1")
    rng = rng_for(seed, 1)
    x = dist_f.sample(n, rng)
    c = dist_g.sample(n, rng)
    return CensoredSample(np.minimum(x, c), (x <= c).astype(np.int8))


def sample_paired(dist_x: DistributionSpec, dist_y: DistributionSpec, n: int, seed: int) -> PairedSample:
    """Independent pairs; the joint law is the product of the marginals."""
    if n < 1:
        raise ModelError("n must be >= 1")
    rng = rng_for(seed, 2)
    return PairedSample(dist_x.sample(n, rng), dist_y.sample(n, rng))


def _numeric_rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            try:
                yield [float(v) for v in row]
            except ValueError:
                if lineno == 0:
                    continue  # header
                raise ModelError(f"{path}:{lineno + 1}: non-numeric row {row!r}") from None


def read_sample_csv(path) -> Sample:
    """One value per line; an optional header line is skipped."""
    return Sample([row[0] for row in _numeric_rows(path)])


def read_censored_csv(path) -> CensoredSample:
    """Rows ``time,delta``; an optional header line is skipped."""
    rows = list(_numeric_rows(path))
    if any(len(r) < 2 for r in rows):
        raise ModelError(f"{path}: censored rows need time,delta")
    return CensoredSample([r[0] for r in rows], [int(r[1]) for r in rows])


def read_paired_csv(path) -> PairedSample:
    rows = list(_numeric_rows(path))
    if any(len(r) < 2 for r in rows):
        raise ModelError(f"{path}: paired rows need x,y")
    return PairedSample([r[0] for r in rows], [r[1] for r in rows])
