"""Simulator abstraction, analytic test functions and the synthetic benchmark.

A :class:`Simulator` wraps a vectorised evaluator ``f(X, Theta) -> Y`` with
``X`` of shape ``(n, design_dim)``, ``Theta`` of shape ``(n, calib_dim)`` and
``Y`` of shape ``(n, response_dim)``.  Analytic functions without design
variables use ``design_dim == 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.stats import qmc

from .distributions import Gaussian, Uniform
from .errors import BoundsError, ConfigError, DimensionError

Evaluator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Simulator:
    name: str
    design_dim: int
    calib_dim: int
    response_dim: int
    design_bounds: np.ndarray
    evaluator: Evaluator = field(repr=False)
    param_names: tuple[str, ...] = ()
    response_labels: tuple[str, ...] = ()
    design_names: tuple[str, ...] = ()
    nominal: np.ndarray | None = None
    # default input distributions over theta (prior / Sobol' inputs)
    calib_dists: tuple = ()

    def __post_init__(self):
        b = np.asarray(self.design_bounds, dtype=float).reshape(self.design_dim, 2)
        object.__setattr__(self, "design_bounds", _frozen(b))
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"theta{i + 1}" for i in range(self.calib_dim)))
        if not self.response_labels:
            object.__setattr__(self, "response_labels", tuple(f"y{j + 1}" for j in range(self.response_dim)))
        if not self.design_names:
            object.__setattr__(self, "design_names", tuple(f"x{i + 1}" for i in range(self.design_dim)))
        if self.nominal is not None:
            object.__setattr__(self, "nominal", _frozen(self.nominal))
        if len(self.param_names) != self.calib_dim or len(self.response_labels) != self.response_dim:
            raise ConfigError(f"{self.name}: label counts do not match declared dimensions")

    def check_design(self, x: np.ndarray) -> np.ndarray:
        """Validate design points (one or many); returns a 2-d array."""
        if self.design_dim == 0:
            n = np.shape(x)[0] if x is not None and np.ndim(x) == 2 else 1
            return np.empty((n, 0))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.design_dim:
            raise DimensionError(f"{self.name}: design point has {x.shape[-1]} values, expected {self.design_dim}")
        lo, hi = self.design_bounds[:, 0], self.design_bounds[:, 1]
        bad = (x < lo) | (x > hi) | ~np.isfinite(x)
        if bad.any():
            row = int(np.argmax(bad.any(axis=1)))
            raise BoundsError((i, float(x[row, i]), float(lo[i]), float(hi[i])) for i in np.flatnonzero(bad[row]))
        return x

    def __call__(self, x, theta) -> np.ndarray:
        """Batch evaluation with broadcasting of a single ``x`` or ``theta``."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if theta.shape[-1] != self.calib_dim:
            raise DimensionError(f"{self.name}: theta has {theta.shape[-1]} values, expected {self.calib_dim}")
        x = self.check_design(x)
        n = max(x.shape[0], theta.shape[0])
        if x.shape[0] not in (1, n) or theta.shape[0] not in (1, n):
            raise DimensionError(f"{self.name}: cannot broadcast {x.shape[0]} design points against {theta.shape[0]} parameter vectors")
        x = np.broadcast_to(x, (n, self.design_dim))
        theta = np.broadcast_to(theta, (n, self.calib_dim))
        return np.asarray(self.evaluator(x, theta), dtype=float).reshape(n, self.response_dim)

    def theta_function(self, x=None) -> Callable[[np.ndarray], np.ndarray]:
        """``Theta -> Y`` with the design variables frozen at ``x`` (default: centre)."""
        if x is None:
            x = self.design_center()
        x = self.check_design(x)
        return lambda theta: self(x, theta)

    def design_center(self) -> np.ndarray:
        return self.design_bounds.mean(axis=1)


def evaluate(sim: Simulator, x, theta) -> np.ndarray:
    """Evaluate a single ``(x, theta)`` pair; returns the response vector."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1:
        raise DimensionError("evaluate takes a single parameter vector; call the simulator for batches")
    x = np.asarray(x, dtype=float).reshape(1, -1) if sim.design_dim else np.empty((1, 0))
    return sim(x, theta)[0]


# ---------------------------------------------------------------- analytic models


def _linear_additive(c) -> Simulator:
    c = np.asarray(c, dtype=float).ravel()
    if c.size < 1:
        raise ConfigError("linear_additive needs at least one coefficient")
    return Simulator(
        name="linear_additive",
        design_dim=0,
        calib_dim=c.size,
        response_dim=1,
        design_bounds=np.empty((0, 2)),
        evaluator=lambda x, th: th @ c,
        calib_dists=tuple(Uniform(0.0, 1.0) for _ in c),
        nominal=np.full(c.size, 0.5),
    )


def _ishigami(a=7.0, b=0.1) -> Simulator:
    def f(x, th):
        return np.sin(th[:, 0]) + a * np.sin(th[:, 1]) ** 2 + b * th[:, 2] ** 4 * np.sin(th[:, 0])

    return Simulator(
        name="ishigami",
        design_dim=0,
        calib_dim=3,
        response_dim=1,
        design_bounds=np.empty((0, 2)),
        evaluator=f,
        calib_dists=tuple(Uniform(-math.pi, math.pi) for _ in range(3)),
        nominal=np.zeros(3),
    )


def _identity(x, th):
    return th


def _conjugate_gaussian(dim: int = 1) -> Simulator:
    # y = theta; dim > 1 gives independent copies (a multi-response toy)
    if dim < 1:
        raise ConfigError("conjugate_gaussian needs dim >= 1")
    return Simulator(
        name="conjugate_gaussian",
        design_dim=0,
        calib_dim=dim,
        response_dim=dim,
        design_bounds=np.empty((0, 2)),
        evaluator=_identity,
        calib_dists=tuple(Gaussian(0.0, 1.0) for _ in range(dim)),
        nominal=np.zeros(dim),
    )


def ishigami_reference(a: float = 7.0, b: float = 0.1) -> dict:
    """Closed-form variance decomposition of the Ishigami function."""
    pi = math.pi
    v = a**2 / 8 + b * pi**4 / 5 + b**2 * pi**8 / 18 + 0.5
    v1 = 0.5 * (1 + b * pi**4 / 5) ** 2
    v2 = a**2 / 8
    v13 = b**2 * pi**8 * (1 / 18 - 1 / 50)
    return {
        "variance": v,
        "main": np.array([v1, v2, 0.0]) / v,
        "total": np.array([v1 + v13, v2, v13]) / v,
        "second_order": {(0, 2): v13 / v},
    }


# ---------------------------------------------------------------- benchmark

BENCHMARK_PARAMS = ("P1008", "P1012", "P1022", "P1028", "P1029")
BENCHMARK_RESPONSES = ("VoidF1", "VoidF2", "VoidF3", "VoidF4")
BENCHMARK_DESIGN = ("pressure", "inlet_mass_flow", "power", "inlet_temperature")
# MPa, kg/s, MW, K
BENCHMARK_BOUNDS = ((0.9730, 8.7050), (2.8000, 19.3583), (0.2200, 7.3300), (440.4929, 564.5076))
BENCHMARK_PRIOR = (0.0, 5.0)

# g_k(theta) = asinh(kappa_k * theta); standardised under U(0, 5)
_KAPPA = (1.0, 1.0, 0.3, 0.3, 0.3)

# Feature weights at the design centre.  Columns: U1..U5, U1*U2, U3*U4, U3*U5.
# The standardised features are orthonormal under the uniform prior, so the
# squared weights are the Sobol' shares at the design centre.
_W = (
    (0.4012, 0.8666, 0.0926, 0.0655, 0.0, -0.2741, 0.0, 0.0),
    (0.3030, 0.4949, 0.4041, 0.6776, 0.0, -0.2020, 0.0, 0.0),
    (0.0707, 0.1732, 0.4472, 0.8602, 0.0, 0.0, -0.1581, 0.0),
    (0.0320, 0.0320, 0.7966, 0.1752, 0.5541, 0.0, 0.0, -0.1600),
)
# Linear design-variable modulation h = 1 + A . xi of each main feature,
# xi the design point rescaled to [-1, 1].  Product features reuse the
# modulation of their first factor, which keeps every response monotone
# increasing in every parameter over the whole prior box.
_A_MAIN = (
    ((0.00, -0.10, 0.12, 0.15), (-0.11, -0.10, 0.14, 0.03), (-0.07, 0.09, 0.06, 0.13),
     (-0.05, 0.05, -0.12, -0.15), (-0.11, 0.10, 0.14, -0.10)),
    ((-0.03, 0.02, -0.09, 0.13), (0.13, -0.11, 0.09, 0.04), (-0.07, 0.02, -0.05, -0.03),
     (0.08, 0.12, -0.05, 0.12), (-0.13, -0.12, 0.02, 0.07)),
    ((-0.08, 0.14, -0.02, -0.02), (-0.09, 0.07, -0.08, -0.13), (0.14, 0.01, 0.15, -0.08),
     (-0.12, 0.06, 0.12, 0.12), (-0.04, -0.15, 0.14, 0.11)),
    ((0.02, -0.08, -0.08, -0.13), (0.06, -0.10, -0.15, 0.05), (-0.07, -0.01, -0.14, -0.04),
     (-0.03, -0.12, -0.08, -0.01), (-0.12, 0.13, -0.08, 0.13)),
)
_PRODUCT_SOURCE = (0, 2, 2)
_BASE0 = (1.0, 2.0, 3.0, 4.0)
_BASE1 = (
    (0.30, 0.40, 0.50, -0.20),
    (0.20, 0.30, 0.60, -0.10),
    (0.10, 0.20, 0.60, -0.10),
    (0.05, 0.10, 0.50, -0.05),
)
# discrepancy shape: delta_j(x) = amp * range_j * sin(pi/2 * D_j . xi + phase_j)
_DISC_DIR = (
    (0.6, -0.3, 0.5, 0.2),
    (-0.4, 0.5, 0.3, 0.3),
    (0.3, 0.4, -0.6, 0.2),
    (0.5, 0.2, 0.4, -0.4),
)
_DISC_PHASE = (0.3, -0.5, 0.8, 0.1)

DEFAULT_BENCHMARK_CONFIG = {"seed": 20180301, "discrepancy_amplitude": 0.05, "noise_scale": 0.05}

# Qualitative significance map at the design centre: "sig" means total effect
# > 0.1, "insig" means < 0.02.  Pairs not listed are intermediate.
BENCHMARK_SOBOL_PATTERN = {
    ("P1008", "VoidF1"): "sig", ("P1012", "VoidF1"): "sig",
    ("P1008", "VoidF2"): "sig", ("P1012", "VoidF2"): "sig",
    ("P1022", "VoidF2"): "sig", ("P1028", "VoidF2"): "sig",
    ("P1022", "VoidF3"): "sig", ("P1028", "VoidF3"): "sig",
    ("P1022", "VoidF4"): "sig", ("P1029", "VoidF4"): "sig",
    ("P1022", "VoidF1"): "insig", ("P1028", "VoidF1"): "insig",
    ("P1008", "VoidF4"): "insig", ("P1012", "VoidF4"): "insig",
    ("P1029", "VoidF1"): "insig", ("P1029", "VoidF2"): "insig", ("P1029", "VoidF3"): "insig",
}


@lru_cache(maxsize=None)
def _feature_moments() -> tuple[np.ndarray, np.ndarray]:
    lo, hi = BENCHMARK_PRIOR
    means, stds = [], []
    for k in _KAPPA:
        m = quad(lambda t: np.arcsinh(k * t), lo, hi)[0] / (hi - lo)
        e2 = quad(lambda t: np.arcsinh(k * t) ** 2, lo, hi)[0] / (hi - lo)
        means.append(m)
        stds.append(math.sqrt(e2 - m * m))
    return np.array(means), np.array(stds)


def _standardize_design(x: np.ndarray) -> np.ndarray:
    b = np.asarray(BENCHMARK_BOUNDS)
    return 2.0 * (x - b[:, 0]) / (b[:, 1] - b[:, 0]) - 1.0


def _benchmark_features(theta: np.ndarray) -> np.ndarray:
    m, s = _feature_moments()
    u = (np.arcsinh(np.asarray(_KAPPA) * theta) - m) / s
    return np.concatenate([u, u[:, 0:1] * u[:, 1:2], u[:, 2:3] * u[:, 3:4], u[:, 2:3] * u[:, 4:5]], axis=1)


def _benchmark_modulation() -> np.ndarray:
    a = np.asarray(_A_MAIN)  # (4 responses, 5 features, 4 design dims)
    return np.concatenate([a, a[:, list(_PRODUCT_SOURCE), :]], axis=1)


def _benchmark_eval(x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    xi = _standardize_design(x)
    phi = _benchmark_features(theta)  # (n, 8)
    # broadcast-and-sum rather than BLAS, so each row is independent of the batch size
    h = 1.0 + (_benchmark_modulation()[None] * xi[:, None, None, :]).sum(-1)  # (n, 4, 8)
    base = np.asarray(_BASE0) + (xi[:, None, :] * np.asarray(_BASE1)[None]).sum(-1)
    return base + (h * np.asarray(_W)[None] * phi[:, None, :]).sum(-1)


@dataclass(frozen=True, eq=False)
class BenchmarkTruth:
    simulator: Simulator
    theta_true: np.ndarray
    noise_std: np.ndarray
    response_range: np.ndarray
    discrepancy_amplitude: float
    config: dict
    target_sobol_pattern: dict = field(default_factory=lambda: dict(BENCHMARK_SOBOL_PATTERN))

    def discrepancy(self, x) -> np.ndarray:
        """Injected model discrepancy; depends on the design point only."""
        xi = _standardize_design(np.atleast_2d(np.asarray(x, dtype=float)))
        shape = np.sin(0.5 * math.pi * xi @ np.asarray(_DISC_DIR).T + np.asarray(_DISC_PHASE))
        return self.discrepancy_amplitude * self.response_range * shape

    def reality(self, x) -> np.ndarray:
        """Noise-free physical response: model at theta_true plus discrepancy."""
        return self.simulator(x, self.theta_true) + self.discrepancy(x)


def make_benchmark(config: dict | None = None) -> BenchmarkTruth:
    """Five-parameter, four-response smooth stand-in for the TRACE/BFBT study.

    Required keys: ``seed``, ``discrepancy_amplitude`` (fraction of each
    response's range over the prior box) and ``noise_scale`` (measurement
    noise STD relative to the prior-induced response STD at the design
    centre, which is 1 by construction).
    """
    if config is None:
        config = dict(DEFAULT_BENCHMARK_CONFIG)
    missing = [k for k in ("seed", "discrepancy_amplitude", "noise_scale") if k not in config]
    if missing:
        raise ConfigError(f"benchmark config missing required key(s): {', '.join(missing)}")
    amp = float(config["discrepancy_amplitude"])
    noise = float(config["noise_scale"])
    if amp < 0 or noise < 0:
        raise ConfigError("discrepancy_amplitude and noise_scale must be nonnegative")
    lo, hi = BENCHMARK_PRIOR
    sim = Simulator(
        name="benchmark",
        design_dim=4,
        calib_dim=5,
        response_dim=4,
        design_bounds=np.asarray(BENCHMARK_BOUNDS),
        evaluator=_benchmark_eval,
        param_names=BENCHMARK_PARAMS,
        response_labels=BENCHMARK_RESPONSES,
        design_names=BENCHMARK_DESIGN,
        nominal=np.ones(5),
        calib_dists=tuple(Uniform(lo, hi) for _ in range(5)),
    )
    x0 = sim.design_center()
    # responses are monotone increasing in every parameter, so the range over
    # the prior box is attained at its corners
    rng_ = sim(x0, np.full(5, hi))[0] - sim(x0, np.full(5, lo))[0]
    return BenchmarkTruth(
        simulator=sim,
        theta_true=_frozen(np.ones(5)),
        noise_std=_frozen(np.full(4, noise)),
        response_range=_frozen(rng_),
        discrepancy_amplitude=amp,
        config={k: config[k] for k in ("seed", "discrepancy_amplitude", "noise_scale")},
    )


_BUILTINS = {
    "linear_additive": lambda p: _linear_additive(p.get("c", (1.0, 2.0))),
    "ishigami": lambda p: _ishigami(float(p.get("a", 7.0)), float(p.get("b", 0.1))),
    "conjugate_gaussian": lambda p: _conjugate_gaussian(int(p.get("dim", 1))),
}


def builtin_model(name: str, params: dict | None = None) -> Simulator:
    if name not in _BUILTINS:
        raise ConfigError(f"unknown builtin model {name!r}; choose from {sorted(_BUILTINS)}")
    return _BUILTINS[name](params or {})


# ---------------------------------------------------------------- data


@dataclass(frozen=True, eq=False)
class ExperimentRecord:
    x: np.ndarray
    observed: np.ndarray
    noise_std: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        obs = _frozen(np.ravel(self.observed))
        sd = _frozen(np.ravel(self.noise_std))
        if obs.shape != sd.shape or len(self.labels) != obs.size:
            raise DimensionError("observed, noise_std and labels must have identical length")
        if np.any(sd < 0) or not np.all(np.isfinite(sd)):
            raise ConfigError("noise_std must be finite and nonnegative")
        object.__setattr__(self, "x", _frozen(np.ravel(self.x)))
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "noise_std", sd)
        object.__setattr__(self, "labels", tuple(self.labels))

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "observed": self.observed.tolist(),
            "noise_std": self.noise_std.tolist(),
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(np.asarray(d["x"], dtype=float), np.asarray(d["observed"], dtype=float),
                   np.asarray(d["noise_std"], dtype=float), tuple(d["labels"]))


def latin_hypercube(bounds, n: int, seed: int) -> np.ndarray:
    """Latin hypercube sample of ``n`` points in the box ``bounds`` (d x 2)."""
    bounds = np.asarray(bounds, dtype=float)
    unit = qmc.LatinHypercube(d=bounds.shape[0], seed=np.random.default_rng(seed)).random(n)
    return qmc.scale(unit, bounds[:, 0], bounds[:, 1])


def generate_dataset(truth: BenchmarkTruth, design: Sequence | np.ndarray | None = None, seed: int | None = None,
                     n_points: int = 40) -> list[ExperimentRecord]:
    """Synthesise observations ``y = model(x, theta_true) + delta(x) + noise``.

    ``design`` defaults to a Latin hypercube of ``n_points`` over the design
    bounds; ``seed`` defaults to the benchmark seed.
    """
    sim = truth.simulator
    if seed is None:
        seed = int(truth.config["seed"])
    if design is None:
        design = latin_hypercube(sim.design_bounds, n_points, seed)
    design = np.asarray(design, dtype=float)
    if design.size == 0:
        raise ConfigError("design list is empty")
    design = sim.check_design(design)
    rng = np.random.default_rng([seed, 1])
    clean = truth.reality(design)
    noisy = clean + rng.standard_normal(clean.shape) * truth.noise_std
    return [ExperimentRecord(x, y, truth.noise_std, sim.response_labels) for x, y in zip(design, noisy)]
