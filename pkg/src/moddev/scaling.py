"""Moderate-deviation scaling sequences a(n).

A scaling must grow to infinity while a(n)/sqrt(n) decreases to zero; the
log-probability speed is a(n)**2.  Validity is certified on a finite window
only, since the defining conditions are asymptotic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError

__all__ = ["ScalingSequence", "ValidationReport", "make_scaling", "validate_scaling"]

SCALING_KINDS = ("sqrt-log-log", "sqrt-log", "power", "user-table")

_REL_TOL = 1e-12


@dataclass(frozen=True)
class ScalingSequence:
    kind: str
    n0: int
    gamma: float | None = None
    table: tuple = field(default=(), repr=False)

    def __call__(self, n):
        """Evaluate a(n); real arguments are accepted for the analytic kinds."""
        n = np.asarray(n, dtype=float)
        if np.any(n < self.n0):
            raise ModelError(f"a(n) requested below n0={self.n0}")
        if self.kind == "sqrt-log":
            out = np.sqrt(np.log(n))
        elif self.kind == "sqrt-log-log":
            out = np.sqrt(np.log(np.log(n)))
        elif self.kind == "power":
            out = n ** self.gamma
        else:
            idx = n.astype(int) - self.n0
            if np.any(idx != n - self.n0):
                raise ModelError("user-table scaling is defined on integers only")
            if np.any(idx >= len(self.table)):
                raise ModelError("n beyond the end of the user table")
            out = np.asarray(self.table, dtype=float)[idx]
        return out[()] if out.ndim == 0 else out

    def speed(self, n):
        """The large-deviation speed a(n)**2."""
        return np.asarray(self(n)) ** 2

    @property
    def n_max(self) -> float:
        return self.n0 + len(self.table) - 1 if self.kind == "user-table" else math.inf

    def to_config(self) -> dict[str, str]:
        out = {"kind": self.kind, "n0": str(self.n0)}
        if self.kind == "power":
            out["gamma"] = repr(self.gamma)
        if self.kind == "user-table":
            out["table"] = ",".join(repr(float(v)) for v in self.table)
        return out

    @classmethod
    def from_config(cls, section) -> "ScalingSequence":
        section = dict(section)
        kind = section.pop("kind", None)
        try:
            n0 = int(section.pop("n0")) if "n0" in section else None
            params = {}
            if "gamma" in section:
                params["gamma"] = float(section.pop("gamma"))
            if "table" in section:
                params["table"] = [float(v) for v in section.pop("table").split(",")]
        except ValueError as exc:
            raise ModelError(str(exc)) from None
        if section:
            raise ModelError(f"unknown scaling fields: {sorted(section)}")
        return make_scaling(kind, params, n0)


def make_scaling(kind: str, params: dict | None = None, n0: int | None = None) -> ScalingSequence:
    """Build a scaling sequence of the given kind.

    ``params`` carries ``gamma`` for ``power`` and ``table`` (values of
    a(n0), a(n0+1), ...) for ``user-table``.  ``n0`` defaults to the
    smallest index at which a(n) is positive.
    """
    params = dict(params or {})
    if kind not in SCALING_KINDS:
        raise ModelError(f"unknown scaling kind {kind!r}")
    default_n0 = {"sqrt-log-log": 3, "sqrt-log": 2, "power": 1, "user-table": 1}[kind]
    n0 = default_n0 if n0 is None else int(n0)
    if n0 < 1:
        raise ModelError("n0 must be a positive integer")
    if kind == "sqrt-log" and n0 < 2:
        raise ModelError("sqrt-log needs n0 >= 2 so that log n > 0")
    if kind == "sqrt-log-log" and math.log(n0) <= 1.0:
        raise ModelError(f"sqrt-log-log needs log log n0 > 0; got n0={n0}")
    if kind == "power":
        gamma = params.get("gamma")
        if gamma is None or not (0.0 < gamma < 0.5):
            raise ModelError("power scaling requires 0 < gamma < 1/2")
        return ScalingSequence(kind, n0, gamma=float(gamma))
    if kind == "user-table":
        table = tuple(float(v) for v in params.get("table", ()))
        if not table or min(table) <= 0:
            raise ModelError("user-table scaling needs positive values")
        return ScalingSequence(kind, n0, table=table)
    return ScalingSequence(kind, n0)


@dataclass(frozen=True)
class ValidationReport:
    n_min: int
    n_max: int
    decreasing_at: tuple     # n where a(n+1) < a(n)
    ratio_increasing_at: tuple  # n where a(n+1)/sqrt(n+1) > a(n)/sqrt(n)

    @property
    def valid(self) -> bool:
        return not self.decreasing_at and not self.ratio_increasing_at

    @property
    def violations(self) -> tuple:
        return tuple(sorted(set(self.decreasing_at) | set(self.ratio_increasing_at)))

    def to_dict(self) -> dict:
        return {
            "n_min": self.n_min,
            "n_max": self.n_max,
            "valid": self.valid,
            "decreasing_at": list(self.decreasing_at),
            "ratio_increasing_at": list(self.ratio_increasing_at),
        }


def validate_scaling(seq: ScalingSequence, n_min: int, n_max: int) -> ValidationReport:
    """Scan [n_min, n_max] for violations of a(n) increasing and a(n)/sqrt(n) decreasing."""
    if not (seq.n0 <= n_min < n_max):
        raise ModelError("need n0 <= n_min < n_max")
    n = np.arange(n_min, n_max + 1, dtype=float)
    a = np.asarray(seq(n), dtype=float)
    ratio = a / np.sqrt(n)
    dec = a[1:] < a[:-1] * (1 - _REL_TOL)
    inc = ratio[1:] > ratio[:-1] * (1 + _REL_TOL)
    idx = n[:-1].astype(int)
    return ValidationReport(
        int(n_min), int(n_max), tuple(int(v) for v in idx[dec]), tuple(int(v) for v in idx[inc])
    )
