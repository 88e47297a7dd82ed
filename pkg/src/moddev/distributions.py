"""Univariate distributions with explicit CDF, quantile and sampler.

Only the families the estimators are exercised on are supported: uniform,
exponential, normal, a point mass (possibly at ``+inf``, which models "no
censoring") and finite discrete tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ModelError

__all__ = [
    "DistributionSpec",
    "uniform",
    "exponential",
    "normal",
    "point_mass",
    "user_table",
]

CONTINUOUS_KINDS = ("uniform", "exponential", "normal")
DISCRETE_KINDS = ("point-mass", "user-table")
KINDS = CONTINUOUS_KINDS + DISCRETE_KINDS

_PARAM_NAMES = {
    "uniform": ("low", "high"),
    "exponential": ("rate",),
    "normal": ("mean", "sd"),
    "point-mass": ("at",),
    "user-table": (),
}


@dataclass(frozen=True)
class DistributionSpec:
    """A distribution on the real line.

    Parameters
    ----------
    kind : str
        One of ``uniform``, ``exponential``, ``normal``, ``point-mass``,
        ``user-table``.
    params : tuple of float
        Kind-specific parameters, see ``_PARAM_NAMES``.
    atoms, probs : tuple of float
        Support and probabilities for ``user-table``.
    """

    kind: str
    params: tuple = ()
    atoms: tuple = field(default=(), repr=False)
    probs: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unknown distribution kind {self.kind!r}")
        p = self.params
        if len(p) != len(_PARAM_NAMES[self.kind]):
            raise ModelError(f"{self.kind} expects parameters {_PARAM_NAMES[self.kind]}")
        if self.kind == "uniform" and not (math.isfinite(p[0]) and math.isfinite(p[1]) and p[0] < p[1]):
            raise ModelError("uniform requires finite low < high")
        if self.kind == "exponential" and not (p[0] > 0 and math.isfinite(p[0])):
            raise ModelError("exponential rate must be positive")
        if self.kind == "normal" and not (p[1] > 0 and math.isfinite(p[0])):
            raise ModelError("normal sd must be positive")
        if self.kind == "point-mass" and math.isnan(p[0]):
            raise ModelError("point mass location is NaN")
        if self.kind == "user-table":
            atoms = np.asarray(self.atoms, dtype=float)
            probs = np.asarray(self.probs, dtype=float)
            if atoms.size == 0 or atoms.shape != probs.shape:
                raise ModelError("user-table needs matching non-empty atoms and probs")
            if np.any(np.diff(atoms) <= 0):
                raise ModelError("user-table atoms must be strictly increasing")
            if np.any(probs <= 0):
                raise ModelError("user-table probabilities must be positive")
            if abs(probs.sum() - 1.0) > 1e-12:
                raise ModelError("user-table probabilities must sum to 1 within 1e-12")

    # -- classification -------------------------------------------------

    @property
    def is_continuous(self) -> bool:
        return self.kind in CONTINUOUS_KINDS

    def support(self) -> tuple[float, float]:
        k, p = self.kind, self.params
        if k == "uniform":
            return p[0], p[1]
        if k == "exponential":
            return 0.0, math.inf
        if k == "normal":
            return -math.inf, math.inf
        if k == "point-mass":
            return p[0], p[0]
        return self.atoms[0], self.atoms[-1]

    def atom_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms and masses of a discrete distribution."""
        if self.kind == "point-mass":
            return np.array([self.params[0]]), np.array([1.0])
        if self.kind == "user-table":
            return np.asarray(self.atoms, dtype=float), np.asarray(self.probs, dtype=float)
        raise ModelError(f"{self.kind} has no atoms")

    # -- distribution functions ------------------------------------------

    def cdf(self, x):
        """Right-continuous distribution function F(x) = P(X <= x)."""
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "uniform":
            out = np.clip((x - p[0]) / (p[1] - p[0]), 0.0, 1.0)
        elif k == "exponential":
            out = np.where(x > 0, -np.expm1(-p[0] * np.maximum(x, 0.0)), 0.0)
        elif k == "normal":
            out = special.ndtr((x - p[0]) / p[1])
        elif k == "point-mass":
            out = (x >= p[0]).astype(float)
        else:
            atoms, probs = self.atom_table()
            cum = _normalised_cumsum(probs)
            idx = np.searchsorted(atoms, x, side="right")
            out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return out[()] if out.ndim == 0 else out

    def cdf_left(self, x):
        """Left limit F(x-) = P(X < x)."""
        if self.is_continuous:
            return self.cdf(x)
        x = np.asarray(x, dtype=float)
        atoms, probs = self.atom_table()
        cum = _normalised_cumsum(probs)
        idx = np.searchsorted(atoms, x, side="left")
        out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        return out[()] if out.ndim == 0 else out

    def survival_left(self, x):
        """P(X >= x), the left-continuous survival function."""
        return 1.0 - self.cdf_left(x)

    def pdf(self, x):
        """Lebesgue density; only defined for continuous kinds."""
        if not self.is_continuous:
            raise ModelError(f"{self.kind} has no density")
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "uniform":
            out = np.where((x >= p[0]) & (x <= p[1]), 1.0 / (p[1] - p[0]), 0.0)
        elif k == "exponential":
            out = np.where(x >= 0, p[0] * np.exp(-p[0] * np.maximum(x, 0.0)), 0.0)
        else:
            z = (x - p[0]) / p[1]
            out = np.exp(-0.5 * z * z) / (p[1] * math.sqrt(2 * math.pi))
        return out[()] if out.ndim == 0 else out

    def quantile(self, q):
        """Generalised inverse inf{x : F(x) >= q} for q in (0, 1]."""
        q = np.asarray(q, dtype=float)
        if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
            raise ModelError("quantile level outside [0, 1]")
        k, p = self.kind, self.params
        if k == "uniform":
            out = p[0] + q * (p[1] - p[0])
        elif k == "exponential":
            with np.errstate(divide="ignore"):
                out = -np.log1p(-q) / p[0]
        elif k == "normal":
            out = p[0] + p[1] * special.ndtri(q)
        elif k == "point-mass":
            out = np.full_like(q, p[0])
        else:
            atoms, probs = self.atom_table()
            cum = _normalised_cumsum(probs)
            idx = np.minimum(np.searchsorted(cum, q, side="left"), atoms.size - 1)
            out = atoms[idx]
        return out[()] if out.ndim == 0 else out

    # -- moments ---------------------------------------------------------

    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == "uniform":
            return 0.5 * (p[0] + p[1])
        if k == "exponential":
            return 1.0 / p[0]
        if k in ("normal", "point-mass"):
            return float(p[0])
        atoms, probs = self.atom_table()
        return float(np.dot(atoms, probs))

    def variance(self) -> float:
        k, p = self.kind, self.params
        if k == "uniform":
            return (p[1] - p[0]) ** 2 / 12.0
        if k == "exponential":
            return 1.0 / p[0] ** 2
        if k == "normal":
            return float(p[1]) ** 2
        if k == "point-mass":
            return 0.0 if math.isfinite(p[0]) else math.nan
        atoms, probs = self.atom_table()
        m = np.dot(atoms, probs)
        return float(np.dot((atoms - m) ** 2, probs))

    # -- sampling --------------------------------------------------------

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        """Draw an array of the given shape."""
        k, p = self.kind, self.params
        if k == "uniform":
            return rng.uniform(p[0], p[1], size=size)
        if k == "exponential":
            return rng.standard_exponential(size=size) / p[0]
        if k == "normal":
            return p[0] + p[1] * rng.standard_normal(size=size)
        if k == "point-mass":
            return np.full(size, p[0], dtype=float)
        atoms, probs = self.atom_table()
        idx = np.searchsorted(_normalised_cumsum(probs), rng.random(size=size), side="right")
        return atoms[np.minimum(idx, atoms.size - 1)]

    # -- serialisation ---------------------------------------------------

    def to_config(self) -> dict[str, str]:
        out = {"kind": self.kind}
        for name, value in zip(_PARAM_NAMES[self.kind], self.params):
            out[name] = repr(float(value))
        if self.kind == "user-table":
            out["atoms"] = ",".join(repr(float(a)) for a in self.atoms)
            out["probs"] = ",".join(repr(float(q)) for q in self.probs)
        return out

    @classmethod
    def from_config(cls, section) -> "DistributionSpec":
        section = dict(section)
        kind = section.pop("kind", None)
        if kind not in KINDS:
            raise ModelError(f"unknown distribution kind {kind!r}")
        names = _PARAM_NAMES[kind]
        try:
            params = tuple(float(section.pop(name)) for name in names)
        except KeyError as exc:
            raise ModelError(f"{kind} requires field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ModelError(str(exc)) from None
        atoms = probs = ()
        if kind == "user-table":
            try:
                atoms = tuple(float(v) for v in section.pop("atoms").split(","))
                probs = tuple(float(v) for v in section.pop("probs").split(","))
            except KeyError as exc:
                raise ModelError(f"user-table requires field {exc.args[0]!r}") from None
        if section:
            raise ModelError(f"unknown distribution fields: {sorted(section)}")
        return cls(kind, params, atoms, probs)


def _normalised_cumsum(probs: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs)
    cum /= cum[-1]
    return cum


def uniform(low: float = 0.0, high: float = 1.0) -> DistributionSpec:
    return DistributionSpec("uniform", (float(low), float(high)))


def exponential(rate: float = 1.0) -> DistributionSpec:
    return DistributionSpec("exponential", (float(rate),))


def normal(mean: float = 0.0, sd: float = 1.0) -> DistributionSpec:
    return DistributionSpec("normal", (float(mean), float(sd)))


def point_mass(at: float) -> DistributionSpec:
    return DistributionSpec("point-mass", (float(at),))


def user_table(atoms, probs) -> DistributionSpec:
    return DistributionSpec(
        "user-table", (), tuple(float(a) for a in atoms), tuple(float(q) for q in probs)
    )
