"""Univariate distributions used as Sobol' inputs and as prior marginals.

Every distribution maps unit-interval samples through ``ppf`` so that the
same quasi-random design can drive any mix of kinds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    kind = "uniform"

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.lo < self.hi:
            raise ConfigError(f"uniform requires finite lo < hi, got ({self.lo}, {self.hi})")

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def std(self) -> float:
        return (self.hi - self.lo) / math.sqrt(12.0)

    def ppf(self, u):
        return self.lo + (self.hi - self.lo) * np.asarray(u, dtype=float)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x > self.lo) & (x < self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)

    def to_dict(self) -> dict:
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    kind = "gaussian"

    def __post_init__(self):
        if not np.isfinite(self.mu) or not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ConfigError(f"gaussian requires finite mean and std > 0, got ({self.mu}, {self.sigma})")

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def mean(self) -> float:
        return self.mu

    def std(self) -> float:
        return self.sigma

    def ppf(self, u):
        return self.mu + self.sigma * special.ndtri(np.asarray(u, dtype=float))

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - _LOG_SQRT_2PI

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mu, "std": self.sigma}


@dataclass(frozen=True, eq=False)
class Empirical:
    """Resamples the stored values with equal weight."""

    values: np.ndarray = field(repr=False)

    kind = "empirical"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 100:
            raise ConfigError(f"empirical distribution needs at least 100 values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ConfigError("empirical distribution values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def support(self) -> tuple[float, float]:
        return (float(self.values.min()), float(self.values.max()))

    def mean(self) -> float:
        return float(self.values.mean())

    def std(self) -> float:
        return float(self.values.std())

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        idx = np.minimum((u * self.values.size).astype(np.int64), self.values.size - 1)
        return self.values[idx]

    def to_dict(self) -> dict:
        return {"kind": "empirical", "values": self.values.tolist()}


def from_dict(d: dict):
    """Build a distribution from ``{"kind": ..., ...}``."""
    try:
        kind = d["kind"]
        if kind == "uniform":
            return Uniform(float(d["lo"]), float(d["hi"]))
        if kind == "gaussian":
            return Gaussian(float(d["mean"]), float(d["std"]))
        if kind == "empirical":
            return Empirical(np.asarray(d["values"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"distribution spec missing key {exc.args[0]!r}") from None
    raise ConfigError(f"unknown distribution kind {kind!r}")
