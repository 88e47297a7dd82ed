"""Experiment configuration: flat INI sections with a strict key schema."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .distributions import DistributionSpec
from .errors import ConfigError, ModdevError
from .estimators import PsiSpec, ScoreFunction
from .scaling import ScalingSequence

__all__ = ["ExperimentConfig", "load_config", "SCHEMA"]

_DIST_KEYS = {"kind", "low", "high", "rate", "mean", "sd", "at", "atoms", "probs"}

SCHEMA: dict[str, set] = {
    "run": {"seed", "workers", "n", "n_grid", "r", "replications"},
    "model": {"tau", "lambda", "p", "statistic", "eps_h"},
    "F": _DIST_KEYS,
    "G": _DIST_KEYS,
    "F0": _DIST_KEYS,
    "F1": _DIST_KEYS,
    "scaling": {"kind", "n0", "gamma", "table"},
    "score": {"kind", "value", "lo", "hi", "coeffs"},
    "psi": {"kind", "center", "radius", "k"},
    "rate": {"names", "x", "a_matrix", "gamma_matrix", "z", "times", "phi", "kernel"},
    "project": {"problem", "n", "y", "refine", "grid_size", "points", "base", "theta", "levels"},
    "test": {"c", "data"},
    "estimate": {"estimator", "data", "data2", "p", "points", "format"},
    "validate": {"n_min", "n_max"},
}


def _float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{where}: {text!r} is not a number") from None
    if math.isnan(value):
        raise ConfigError(f"{where}: NaN is not allowed")
    return value


def _int(text: str, where: str) -> int:
    value = _float(text, where)
    if value != int(value):
        raise ConfigError(f"{where}: {text!r} is not an integer")
    return int(value)


@dataclass
class ExperimentConfig:
    sections: dict = field(default_factory=dict)

    # raw access

    def has(self, section: str, key: str | None = None) -> bool:
        if section not in self.sections:
            return False
        return key is None or key in self.sections[section]

    def get(self, section: str, key: str, default=None) -> str | None:
        return self.sections.get(section, {}).get(key, default)

    def require(self, section: str, key: str) -> str:
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"missing [{section}] {key}")
        return value

    def float(self, section: str, key: str, default=None) -> float | None:
        v = self.get(section, key)
        return default if v is None else _float(v, f"[{section}] {key}")

    def int(self, section: str, key: str, default=None) -> int | None:
        v = self.get(section, key)
        return default if v is None else _int(v, f"[{section}] {key}")

    def floats(self, section: str, key: str, default=None) -> list[float] | None:
        v = self.get(section, key)
        if v is None:
            return default
        return [_float(t.strip(), f"[{section}] {key}") for t in v.split(",") if t.strip()]

    def ints(self, section: str, key: str, default=None) -> list[int] | None:
        v = self.get(section, key)
        if v is None:
            return default
        return [_int(t.strip(), f"[{section}] {key}") for t in v.split(",") if t.strip()]

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    # typed builders

    def seed(self) -> int:
        if not self.has("run", "seed"):
            raise ConfigError("a seed is required for stochastic runs ([run] seed or --seed)")
        seed = self.int("run", "seed")
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return seed

    def distribution(self, section: str) -> DistributionSpec:
        if section not in self.sections:
            raise ConfigError(f"missing section [{section}]")
        try:
            return DistributionSpec.from_config(self.sections[section])
        except ModdevError as exc:
            raise ConfigError(f"[{section}]: {exc}") from None

    def scaling(self) -> ScalingSequence:
        if "scaling" not in self.sections:
            raise ConfigError("missing section [scaling]")
        try:
            return ScalingSequence.from_config(self.sections["scaling"])
        except ModdevError as exc:
            raise ConfigError(f"[scaling]: {exc}") from None

    def score(self) -> ScoreFunction:
        kind = self.get("score", "kind", "constant")
        if kind == "constant":
            return ScoreFunction.constant(self.float("score", "value", 1.0))
        if kind == "indicator":
            return ScoreFunction.indicator(self.float("score", "lo"), self.float("score", "hi"),
                                           self.float("score", "value", 1.0))
        if kind == "trimmed-mean":
            return ScoreFunction.trimmed_mean(self.float("score", "lo"), self.float("score", "hi"))
        if kind == "polynomial":
            return ScoreFunction.polynomial(self.floats("score", "coeffs"),
                                            self.float("score", "lo", 0.0), self.float("score", "hi", 1.0))
        raise ConfigError(f"[score] unknown kind {kind!r}")

    def psi(self) -> PsiSpec:
        kind = self.get("psi", "kind", "location")
        center = self.float("psi", "center", 0.0)
        radius = self.float("psi", "radius", 5.0)
        if kind == "location":
            return PsiSpec.location(center, radius)
        if kind == "sign":
            return PsiSpec.sign(center, radius)
        if kind == "huber":
            return PsiSpec.huber(self.float("psi", "k", 1.345), center, radius)
        raise ConfigError(f"[psi] unknown kind {kind!r}")

    def resolved(self) -> dict:
        """Every section and key, sorted, for embedding in outputs."""
        return {s: dict(sorted(keys.items())) for s, keys in sorted(self.sections.items())}


def load_config(path) -> ExperimentConfig:
    """Parse an INI file and reject unknown sections and keys."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        keys = dict(parser[name])
        unknown = sorted(set(keys) - SCHEMA[name])
        if unknown:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
        sections[name] = {k: v.strip() for k, v in keys.items()}
    return ExperimentConfig(sections)
