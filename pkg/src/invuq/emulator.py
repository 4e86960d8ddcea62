"""Gaussian-process regression with maximum-likelihood hyperparameters.

Covariance: ``c(x, x') = sigma2 * exp(-sum_k omega_k |x_k - x'_k|**p_k)``
plus a per-point nugget on the diagonal.  The regression mean is
``H(x) @ beta`` with a constant or linear basis; ``beta`` is profiled out by
generalised least squares whenever hyperparameters are fitted.

Hyperparameters are always expressed in the original units of the data.
:func:`fit_mle` standardises internally to condition the search and
back-transforms the result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

from .errors import ConditioningError, ConfigError, DimensionError

_LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-4
BASES = ("constant", "linear")


@dataclass(frozen=True)
class GPHyperparameters:
    beta: np.ndarray
    sigma2: float
    omega: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        p = np.broadcast_to(np.asarray(self.p, dtype=float), omega.shape).copy()
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "p", p)
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        if np.any(~(omega > 0)) or np.any(~np.isfinite(omega)):
            raise ConfigError("all omega must be positive and finite")
        if np.any((p <= 0) | (p > 2)):
            raise ConfigError("roughness exponents p must lie in (0, 2]")

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "sigma2": float(self.sigma2),
                "omega": self.omega.tolist(), "p": self.p.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GPHyperparameters":
        return cls(np.asarray(d["beta"]), float(d["sigma2"]), np.asarray(d["omega"]), np.asarray(d["p"]))


def correlation(x1: np.ndarray, x2: np.ndarray, omega, p) -> np.ndarray:
    """Power-exponential correlation matrix between the rows of x1 and x2."""
    d = np.abs(x1[:, None, :] - x2[None, :, :])
    p = np.asarray(p, dtype=float)
    if np.all(p == 2.0):
        d = d * d
    else:
        d = d ** p
    return np.exp(-(d @ np.asarray(omega, dtype=float)))


def basis_matrix(x: np.ndarray, basis: str) -> np.ndarray:
    if basis == "constant":
        return np.ones((x.shape[0], 1))
    if basis == "linear":
        return np.hstack([np.ones((x.shape[0], 1)), x])
    raise ConfigError(f"unknown basis {basis!r}; choose from {BASES}")


def _check_duplicates(x: np.ndarray, nugget: np.ndarray) -> None:
    # exactly repeated inputs without nugget make the covariance singular;
    # jitter would hide that, so reject it outright
    zero = nugget <= 0
    if zero.sum() < 2:
        return
    rows = x[zero]
    _, counts = np.unique(rows, axis=0, return_counts=True)
    if np.any(counts > 1):
        raise ConditioningError("duplicate training inputs with zero nugget: covariance is singular")


def factorize(k: np.ndarray, sigma2: float) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``k`` with jitter escalation.

    Tries the plain matrix first, then adds ``1e-10 * sigma2`` to the
    diagonal, growing tenfold per retry up to ``1e-4 * sigma2``.  Returns
    ``(lower_factor, jitter_added)``.
    """
    try:
        return np.linalg.cholesky(k), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(k.shape[0])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return np.linalg.cholesky(k + jitter * sigma2 * eye), jitter * sigma2
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise ConditioningError(
        f"covariance not positive definite after jitter escalation to {JITTER_MAX:g} * sigma2"
    )


def _prepare(inputs, outputs, nugget):
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(outputs, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise DimensionError(f"{x.shape[0]} input rows but {y.size} outputs")
    nug = np.broadcast_to(np.asarray(0.0 if nugget is None else nugget, dtype=float), y.shape).copy()
    if np.any(nug < 0):
        raise ConfigError("nugget must be nonnegative")
    return x, y, nug


def _gls(lf, h, y):
    """Profiled beta and whitened quantities for a given Cholesky factor."""
    hw = linalg.solve_triangular(lf, h, lower=True, check_finite=False)
    yw = linalg.solve_triangular(lf, y, lower=True, check_finite=False)
    beta = np.linalg.solve(hw.T @ hw, hw.T @ yw)
    return beta, yw - hw @ beta


def _lml_terms(x, y, nug, sigma2, omega, p, basis, beta=None):
    k = sigma2 * correlation(x, x, omega, p)
    k[np.diag_indices_from(k)] += nug
    lf, jitter = factorize(k, sigma2)
    h = basis_matrix(x, basis)
    if beta is None:
        beta, rw = _gls(lf, h, y)
    else:
        beta = np.asarray(beta, dtype=float)
        rw = linalg.solve_triangular(lf, y - h @ beta, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(lf)))
    lml = -0.5 * float(rw @ rw) - 0.5 * logdet - 0.5 * y.size * _LOG_2PI
    return lml, beta, lf, jitter


def log_marginal_likelihood(hyper: GPHyperparameters, inputs, outputs, nugget=None, basis: str = "constant",
                            profile_beta: bool = False) -> float:
    """Gaussian log-likelihood of ``outputs`` under the GP prior.

    Uses ``hyper.beta`` unless ``profile_beta`` is set, in which case the
    GLS estimate replaces it.
    """
    x, y, nug = _prepare(inputs, outputs, nugget)
    if x.shape[1] != hyper.omega.size:
        raise DimensionError(f"inputs have {x.shape[1]} columns, hyperparameters {hyper.omega.size}")
    _check_duplicates(x, nug)
    beta = None if profile_beta else hyper.beta
    return _lml_terms(x, y, nug, hyper.sigma2, hyper.omega, hyper.p, basis, beta)[0]


@dataclass(frozen=True, eq=False)
class TrainedGP:
    inputs: np.ndarray
    outputs: np.ndarray
    hyper: GPHyperparameters
    nugget: np.ndarray
    basis: str = "constant"
    # filled in by __post_init__
    factor: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False)
    alpha: np.ndarray = field(init=False, repr=False)
    fit_info: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        x, y, nug = _prepare(self.inputs, self.outputs, self.nugget)
        if x.shape[1] != self.hyper.omega.size:
            raise DimensionError("training inputs and omega disagree in dimension")
        basis_matrix(x[:1], self.basis)
        _check_duplicates(x, nug)
        h = self.hyper
        k = h.sigma2 * correlation(x, x, h.omega, h.p)
        k[np.diag_indices_from(k)] += nug
        lf, jitter = factorize(k, h.sigma2)
        resid = y - basis_matrix(x, self.basis) @ h.beta
        alpha = linalg.cho_solve((lf, True), resid)
        for name, val in (("inputs", x), ("outputs", y), ("nugget", nug), ("factor", lf), ("alpha", alpha)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "jitter", jitter)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self.hyper, self.inputs, self.outputs, self.nugget, self.basis)

    def predict(self, queries, full_cov: bool = True):
        return predict(self, queries, full_cov=full_cov)

    def to_dict(self) -> dict:
        return {"inputs": self.inputs.tolist(), "outputs": self.outputs.tolist(),
                "hyper": self.hyper.to_dict(), "nugget": self.nugget.tolist(), "basis": self.basis}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedGP":
        return cls(np.asarray(d["inputs"], dtype=float), np.asarray(d["outputs"], dtype=float),
                   GPHyperparameters.from_dict(d["hyper"]), np.asarray(d["nugget"], dtype=float), d["basis"])


def predict(gp: TrainedGP, queries, full_cov: bool = True):
    """Conditional mean and covariance of the latent process at ``queries``.

    ``beta`` is treated as known (plug-in), so far from the data the mean
    reverts to the regression mean and the variance to ``sigma2``.  With
    ``full_cov=False`` the second return value is the variance vector.
    """
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q[None, :] if gp.input_dim > 1 or q.size == 1 else q[:, None]
    if q.shape[1] != gp.input_dim:
        raise DimensionError(f"queries have {q.shape[1]} columns, GP was trained on {gp.input_dim}")
    h = gp.hyper
    kq = h.sigma2 * correlation(q, gp.inputs, h.omega, h.p)
    mean = basis_matrix(q, gp.basis) @ h.beta + kq @ gp.alpha
    v = linalg.solve_triangular(gp.factor, kq.T, lower=True, check_finite=False)
    if full_cov:
        cov = h.sigma2 * correlation(q, q, h.omega, h.p) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        d = np.diag_indices_from(cov)
        cov[d] = np.maximum(cov[d], 0.0)
        return mean, cov
    var = h.sigma2 - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


DEFAULT_BOUNDS = {"sigma2": (1e-6, 1e2), "omega": (1e-3, 1e3), "p": (1.0, 2.0)}


def _log_bounds(bounds, d, optimize_p):
    b = dict(DEFAULT_BOUNDS)
    if bounds:
        b.update(bounds)
    lo = [math.log(b["sigma2"][0])]
    hi = [math.log(b["sigma2"][1])]
    om = np.broadcast_to(np.asarray(b["omega"], dtype=float).reshape(-1, 2), (d, 2))
    lo += list(np.log(om[:, 0]))
    hi += list(np.log(om[:, 1]))
    if optimize_p:
        pb = np.broadcast_to(np.asarray(b["p"], dtype=float).reshape(-1, 2), (d, 2))
        if np.any(pb[:, 0] <= 0) or np.any(pb[:, 1] > 2):
            raise ConfigError("p bounds must lie within (0, 2]")
        lo += list(pb[:, 0])
        hi += list(pb[:, 1])
    lo, hi = np.array(lo), np.array(hi)
    if np.any(~(lo <= hi)):
        raise ConfigError("hyperparameter bounds must satisfy lower <= upper")
    return lo, hi


def fit_mle(inputs, outputs, nugget=None, basis: str = "constant", bounds: dict | None = None, seed: int = 0,
            n_starts: int = 8, optimize_p: bool = False, p: float = 2.0, maxiter: int | None = None) -> TrainedGP:
    """Fit (sigma2, omega[, p]) by maximum likelihood with beta profiled out.

    Derivative-free bounded Nelder-Mead from ``n_starts`` Latin-hypercube
    starting points in log-hyperparameter space.  ``bounds`` entries
    (``sigma2``, ``omega``, ``p``) apply to the standardised problem:
    inputs scaled to [0, 1] per column, outputs centred and scaled to unit
    variance.
    """
    x, y, nug = _prepare(inputs, outputs, nugget)
    n, d = x.shape
    basis_matrix(x[:1], basis)
    if n < d + 2:
        raise ConfigError(f"need at least {d + 2} training points for {d} inputs, got {n}")
    _check_duplicates(x, nug)

    xlo = x.min(axis=0)
    xrange = x.max(axis=0) - xlo
    xrange[xrange == 0] = 1.0
    ymean = y.mean()
    yscale = y.std()
    if yscale == 0:
        yscale = 1.0
    xs = (x - xlo) / xrange
    ys = (y - ymean) / yscale
    nugs = nug / yscale**2

    lo, hi = _log_bounds(bounds, d, optimize_p)

    def unpack(z):
        s2 = math.exp(z[0])
        om = np.exp(z[1:1 + d])
        pp = z[1 + d:] if optimize_p else np.full(d, p)
        return s2, om, pp

    def objective(z):
        s2, om, pp = unpack(z)
        try:
            return -_lml_terms(xs, ys, nugs, s2, om, pp, basis)[0]
        except (ConditioningError, np.linalg.LinAlgError, FloatingPointError, ValueError):
            return np.inf

    starts = qmc.scale(qmc.LatinHypercube(d=lo.size, seed=np.random.default_rng(seed)).random(n_starts), lo, hi) \
        if np.all(hi > lo) else np.tile(lo, (n_starts, 1))
    if maxiter is None:
        maxiter = 200 * lo.size
    best = None
    start_values = []
    for z0 in starts:
        f0 = objective(z0)
        start_values.append(f0)
        if not np.isfinite(f0):
            continue
        res = optimize.minimize(objective, z0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                options={"maxiter": maxiter, "xatol": 1e-5, "fatol": 1e-8})
        z, fz = (res.x, res.fun) if res.fun <= f0 else (z0, f0)
        if best is None or fz < best[1]:
            best = (np.asarray(z), fz)
    if best is None:
        raise ConditioningError("every multi-start point failed to factorise the covariance")

    s2, om, pp = unpack(best[0])
    # back to original units: omega scales with range**-p, sigma2 with yscale**2
    omega = om / xrange**pp
    sigma2 = s2 * yscale**2
    k = sigma2 * correlation(x, x, omega, pp)
    k[np.diag_indices_from(k)] += nug
    lf, _ = factorize(k, sigma2)
    beta, _ = _gls(lf, basis_matrix(x, basis), y)
    hyper = GPHyperparameters(beta, sigma2, omega, pp)
    start_hypers = []
    for z0 in starts:
        s0, o0, p0 = unpack(z0)
        start_hypers.append({"sigma2": s0 * yscale**2, "omega": (o0 / xrange**p0).tolist(), "p": list(p0)})
    info = {"starts": start_hypers, "start_neg_lml_std": [float(v) for v in start_values],
            "neg_lml_std": float(best[1]), "seed": seed}
    return TrainedGP(x, y, hyper, nug, basis, fit_info=info)
