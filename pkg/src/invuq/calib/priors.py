"""Prior specifications over the calibration vector."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..distributions import Gaussian, Uniform
from ..errors import ConfigError, DimensionError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class IndependentPrior:
    """Product of independent uniform or Gaussian marginals."""

    marginals: tuple

    kind = "independent"

    def __post_init__(self):
        m = tuple(self.marginals)
        if not m:
            raise ConfigError("prior needs at least one marginal")
        for d in m:
            if not isinstance(d, (Uniform, Gaussian)):
                raise ConfigError(f"prior marginals must be uniform or gaussian, got {d!r}")
        object.__setattr__(self, "marginals", m)

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([d.support[0] for d in self.marginals])
        hi = np.array([d.support[1] for d in self.marginals])
        return lo, hi

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionError(f"prior is {self.dim}-dimensional, got shape {theta.shape}")
        total = 0.0
        for d, t in zip(self.marginals, theta):
            total += float(d.logpdf(t))
        return total

    def in_support(self, theta) -> bool:
        return bool(np.isfinite(self.logpdf(theta)))

    def mean(self) -> np.ndarray:
        return np.array([d.mean() for d in self.marginals])

    def std(self) -> np.ndarray:
        return np.array([d.std() for d in self.marginals])

    def marginal_dists(self) -> tuple:
        return self.marginals

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.uniform(1e-12, 1 - 1e-12, size=(n, self.dim))
        return np.column_stack([d.ppf(u[:, k]) for k, d in enumerate(self.marginals)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "marginals": [d.to_dict() for d in self.marginals]}


@dataclass(frozen=True, eq=False)
class TruncatedGaussianPrior:
    """Multivariate Gaussian restricted to the box ``[lower, upper]``.

    The log density omits the truncation mass, which is constant in theta
    and therefore irrelevant to Metropolis sampling.
    """

    mean_vector: np.ndarray
    cov: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    kind = "truncated_gaussian"

    def __post_init__(self):
        mu = np.asarray(self.mean_vector, dtype=float).ravel()
        cov = np.asarray(self.cov, dtype=float)
        d = mu.size
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (d,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (d,)).copy()
        if cov.shape != (d, d):
            raise DimensionError(f"covariance must be {d}x{d}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=0.0):
            raise ConfigError("prior covariance must be symmetric")
        try:
            chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            raise ConfigError("prior covariance must be positive definite") from None
        if np.any(~(lo < hi)):
            raise ConfigError("truncation bounds must satisfy lower < upper")
        for name, val in (("mean_vector", mu), ("cov", cov), ("lower", lo), ("upper", hi)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_half_logdet", float(np.sum(np.log(np.diag(chol)))))

    @property
    def dim(self) -> int:
        return self.mean_vector.size

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower.copy(), self.upper.copy()

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionError(f"prior is {self.dim}-dimensional, got shape {theta.shape}")
        if np.any(theta <= self.lower) or np.any(theta >= self.upper) or not np.all(np.isfinite(theta)):
            return -math.inf
        z = linalg.solve_triangular(self._chol, theta - self.mean_vector, lower=True, check_finite=False)
        return -0.5 * self.dim * _LOG_2PI - self._half_logdet - 0.5 * float(z @ z)

    def in_support(self, theta) -> bool:
        return bool(np.isfinite(self.logpdf(theta)))

    def mean(self) -> np.ndarray:
        # untruncated mean pulled inside the box; used as a starting point
        span = self.upper - self.lower
        eps = np.where(np.isfinite(span), 1e-6 * span, 1e-6)
        return np.clip(self.mean_vector, self.lower + eps, self.upper - eps)

    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def marginal_dists(self) -> tuple:
        return tuple(Gaussian(float(m), float(s)) for m, s in zip(self.mean_vector, self.std()))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Rejection sampling from the box-truncated Gaussian."""
        out = np.empty((0, self.dim))
        while out.shape[0] < n:
            z = rng.standard_normal((max(2 * n, 64), self.dim))
            draw = self.mean_vector + z @ self._chol.T
            keep = np.all((draw > self.lower) & (draw < self.upper), axis=1)
            out = np.vstack([out, draw[keep]])
        return out[:n]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mean": self.mean_vector.tolist(), "cov": self.cov.tolist(),
                "lower": self.lower.tolist(), "upper": self.upper.tolist()}


Prior = IndependentPrior | TruncatedGaussianPrior


def prior_from_dict(d: dict, dim: int | None = None):
    """Build a prior from its serialized form.

    Accepts ``{"kind": "independent", "marginals": [...]}``, the truncated
    Gaussian form, or ``{"kind": "uniform", "lo": a, "hi": b}`` repeated
    ``dim`` times.
    """
    from ..distributions import from_dict as dist_from_dict

    kind = d.get("kind")
    if kind == "independent":
        return IndependentPrior(tuple(dist_from_dict(m) for m in d["marginals"]))
    if kind in ("truncated_gaussian", "multivariate_gaussian"):
        mean = np.asarray(d["mean"], dtype=float)
        lower = d.get("lower", -np.inf)
        upper = d.get("upper", np.inf)
        return TruncatedGaussianPrior(mean, np.asarray(d["cov"], dtype=float),
                                      np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    if kind in ("uniform", "gaussian"):
        if dim is None:
            raise ConfigError("a scalar prior kind needs the parameter dimension")
        return IndependentPrior(tuple(dist_from_dict(d) for _ in range(dim)))
    raise ConfigError(f"unknown prior kind {kind!r}")
