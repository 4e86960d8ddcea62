"""Data splitting, discrepancy construction and the three-part likelihood.

The residual model is ``y_obs = y_model(x, theta) + delta(x) + eps``.  The
likelihood covariance for each response is
``Sigma = Sigma_exp + Sigma_bias + Sigma_code`` where ``Sigma_exp`` holds the
measurement variances, ``Sigma_bias`` the predictive covariance of the
discrepancy GP and ``Sigma_code`` the emulator predictive covariance (zero
when the simulator is evaluated directly).  Responses are independent, so
``Sigma`` is block-diagonal by response.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import linalg

from ..emulator import TrainedGP, factorize, fit_mle, predict
from ..errors import CalibrationError, ConditioningError, ConfigError, DimensionError
from ..model import ExperimentRecord, Simulator, latin_hypercube
from .priors import IndependentPrior, TruncatedGaussianPrior


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class DataSplit:
    calibration: tuple[ExperimentRecord, ...]
    validation: tuple[ExperimentRecord, ...]
    calibration_index: tuple[int, ...]
    validation_index: tuple[int, ...]


def split_data(dataset: Sequence[ExperimentRecord], validation_fraction: float = 0.5, seed: int = 0,
               random_start: bool = False) -> DataSplit:
    """Greedy maximin choice of validation records in normalised design space.

    The first validation record is the one farthest from the centroid (lowest
    index on ties); each next pick maximises the distance to the records
    already chosen.  ``seed`` only matters with ``random_start=True``.
    """
    records = list(dataset)
    n = len(records)
    if n < 4:
        raise ConfigError(f"splitting needs at least 4 records, got {n}")
    if not 0.0 < validation_fraction < 1.0:
        raise ConfigError(f"validation_fraction must lie in (0, 1), got {validation_fraction}")
    n_val = int(round(validation_fraction * n))
    if n_val == 0:
        raise ConfigError(f"validation fraction {validation_fraction} leaves the validation set empty")
    if n_val == n:
        raise ConfigError(f"validation fraction {validation_fraction} leaves the calibration set empty")

    x = np.array([r.x for r in records], dtype=float).reshape(n, -1)
    span = x.max(axis=0) - x.min(axis=0) if x.shape[1] else np.empty(0)
    z = (x - x.min(axis=0)) / np.where(span > 0, span, 1.0)
    if random_start:
        first = int(np.random.default_rng(seed).integers(n))
    else:
        first = int(np.argmax(np.round(np.linalg.norm(z - z.mean(axis=0), axis=1), 12)))
    chosen = [first]
    dmin = np.linalg.norm(z - z[first], axis=1)
    dmin[first] = -np.inf
    while len(chosen) < n_val:
        nxt = int(np.argmax(np.round(dmin, 12)))
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(z - z[nxt], axis=1))
        dmin[chosen] = -np.inf
    val = tuple(sorted(chosen))
    cal = tuple(i for i in range(n) if i not in set(val))
    return DataSplit(tuple(records[i] for i in cal), tuple(records[i] for i in val), cal, val)


# ---------------------------------------------------------------- discrepancy


def _stack(records: Sequence[ExperimentRecord]):
    x = np.array([r.x for r in records], dtype=float).reshape(len(records), -1)
    y = np.array([r.observed for r in records], dtype=float)
    sd = np.array([r.noise_std for r in records], dtype=float)
    return x, y, sd


def build_discrepancy(model: Simulator, validation: Sequence[ExperimentRecord], theta_ref,
                      seed: int = 0, n_starts: int = 8) -> tuple[TrainedGP, ...]:
    """One GP per response fitted to ``y_obs - y_model(x, theta_ref)``.

    The measurement variances enter as the per-point nugget.
    """
    validation = list(validation)
    if not validation:
        raise ConfigError("discrepancy needs a nonempty validation set")
    if model.design_dim == 0:
        raise ConfigError(f"{model.name} has no design variables; a discrepancy GP cannot be fitted")
    theta_ref = np.asarray(theta_ref, dtype=float)
    x, y, sd = _stack(validation)
    resid = y - model(x, theta_ref)
    gps = []
    for j, label in enumerate(model.response_labels):
        try:
            gps.append(fit_mle(x, resid[:, j], nugget=sd[:, j] ** 2, seed=seed + j, n_starts=n_starts))
        except Exception as exc:
            raise CalibrationError(f"discrepancy GP for response {label!r} failed: {exc}") from exc
    return tuple(gps)


# ---------------------------------------------------------------- covariance


def assemble_covariance(sigma_exp_diag, sigma_bias=None, sigma_code=None) -> np.ndarray:
    """``Sigma_exp + Sigma_bias + Sigma_code``, checked positive definite.

    If the plain sum fails to factorise, jitter is added to the diagonal,
    starting at 1e-10 times the mean diagonal and growing tenfold up to
    1e-4; the returned matrix includes any jitter that was needed.
    """
    e = np.asarray(sigma_exp_diag, dtype=float).ravel()
    n = e.size
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ConfigError("experimental variances must be finite and nonnegative")
    total = np.diag(e)
    for name, m in (("sigma_bias", sigma_bias), ("sigma_code", sigma_code)):
        if m is None:
            continue
        m = np.asarray(m, dtype=float)
        if m.shape != (n, n):
            raise DimensionError(f"{name} has shape {m.shape}, expected {(n, n)}")
        if not np.allclose(m, m.T, rtol=1e-8, atol=1e-12 * max(1.0, float(np.abs(m).max(initial=0.0)))):
            raise ConfigError(f"{name} must be symmetric")
        total = total + m
    total = 0.5 * (total + total.T)
    if n and not np.any(np.diag(total) > 0):
        raise ConditioningError("likelihood covariance is identically zero; some noise or bias variance is required")
    _, jitter = factorize(total, _scale(total))
    if jitter:
        total[np.diag_indices(n)] += jitter
    return total


def _scale(k: np.ndarray) -> float:
    s = float(np.mean(np.diag(k))) if k.size else 1.0
    return s if s > 0 else 1.0


# ---------------------------------------------------------------- context


@dataclass(frozen=True, eq=False)
class ResponseTerm:
    label: str
    column: int
    y: np.ndarray
    noise_var: np.ndarray
    delta_mean: np.ndarray
    sigma_bias: np.ndarray
    emulator: TrainedGP | None = None
    # direct mode: fixed Sigma, cached as a whitening matrix and half log-det
    whiten: np.ndarray | None = field(default=None, repr=False)
    half_logdet: float = 0.0


@dataclass(frozen=True, eq=False)
class LikelihoodContext:
    """Everything the likelihood needs; immutable and safe to share."""

    x_cal: np.ndarray
    terms: tuple[ResponseTerm, ...]
    simulator: Simulator
    mode: str = "direct"
    active: tuple[str, ...] = ()
    discrepancy: tuple[TrainedGP, ...] | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = tuple(t.label for t in self.terms)
        active = tuple(self.active) or labels
        missing = [a for a in active if a not in labels]
        if missing:
            raise ConfigError(f"active responses {missing} are not in the context {labels}")
        if self.mode not in ("direct", "emulator"):
            raise ConfigError(f"likelihood mode must be 'direct' or 'emulator', got {self.mode!r}")
        if self.mode == "emulator" and any(t.emulator is None for t in self.terms if t.label in active):
            raise ConfigError("emulator mode needs an emulator for every active response")
        object.__setattr__(self, "active", tuple(lbl for lbl in labels if lbl in active))
        object.__setattr__(self, "_active_terms", tuple(t for t in self.terms if t.label in self.active))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    @property
    def n_records(self) -> int:
        return self.x_cal.shape[0]

    def with_subset(self, labels: Sequence[str]) -> "LikelihoodContext":
        """Same fitted models, different active responses."""
        return replace(self, active=tuple(labels))

    def covariance(self, label: str, theta=None) -> np.ndarray:
        """Assembled likelihood covariance of one response block."""
        term = self.terms[self.labels.index(label)]
        code = None
        if self.mode == "emulator":
            if theta is None:
                raise ConfigError("emulator-mode covariance depends on theta")
            code = predict(term.emulator, self._queries(theta), full_cov=True)[1]
        return assemble_covariance(term.noise_var, term.sigma_bias, code)

    def _queries(self, theta) -> np.ndarray:
        t = np.broadcast_to(np.asarray(theta, dtype=float), (self.n_records, self.simulator.calib_dim))
        return np.hstack([self.x_cal, t])

    def log_likelihood(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        total = 0.0
        if self.mode == "direct":
            t = np.broadcast_to(theta, (self.n_records, theta.size))
            ym = np.asarray(self.simulator.evaluator(self.x_cal, t), dtype=float).reshape(self.n_records, -1)
            for term in self._active_terms:
                r = term.y - ym[:, term.column] - term.delta_mean
                z = term.whiten @ r
                total += -term.half_logdet - 0.5 * float(z @ z)
        else:
            q = self._queries(theta)
            for term in self._active_terms:
                mean, code = predict(term.emulator, q, full_cov=True)
                sig = term.sigma_bias + code
                sig[np.diag_indices_from(sig)] += term.noise_var
                lf, _ = factorize(sig, _scale(sig))
                z = linalg.solve_triangular(lf, term.y - mean - term.delta_mean, lower=True, check_finite=False)
                total += -float(np.sum(np.log(np.diag(lf)))) - 0.5 * float(z @ z)
        return total if math.isfinite(total) else -math.inf


def _direct_cache(noise_var, sigma_bias):
    sig = assemble_covariance(noise_var, sigma_bias)
    lf = linalg.cholesky(sig, lower=True)
    whiten = linalg.solve_triangular(lf, np.eye(lf.shape[0]), lower=True)
    return whiten, float(np.sum(np.log(np.diag(lf))))


def make_context(calibration: Sequence[ExperimentRecord], model: Simulator,
                 discrepancy: Sequence[TrainedGP] | None = None, emulators: Sequence[TrainedGP] | None = None,
                 active: Sequence[str] | None = None, info: dict | None = None) -> LikelihoodContext:
    """Assemble a context from calibration records and fitted models.

    Without ``discrepancy`` the bias term is zero.  Supplying ``emulators``
    switches to emulator mode, where the simulator is never called.
    """
    calibration = list(calibration)
    if not calibration:
        raise ConfigError("calibration set is empty")
    x, y, sd = _stack(calibration)
    x = model.check_design(x) if model.design_dim else np.empty((len(calibration), 0))
    labels = tuple(calibration[0].labels)
    if labels != tuple(model.response_labels):
        raise ConfigError(f"record labels {labels} do not match model responses {model.response_labels}")
    mode = "direct" if emulators is None else "emulator"
    terms = []
    for j, label in enumerate(labels):
        if discrepancy is not None:
            dmean, dcov = predict(discrepancy[j], x, full_cov=True)
        else:
            dmean, dcov = np.zeros(len(calibration)), np.zeros((len(calibration),) * 2)
        nv = sd[:, j] ** 2
        kw = {}
        if mode == "direct":
            try:
                w, hl = _direct_cache(nv, dcov)
            except ConditioningError as exc:
                raise ConditioningError(f"likelihood covariance for {label!r} is singular: {exc}") from exc
            kw = {"whiten": w, "half_logdet": hl}
        terms.append(ResponseTerm(label, j, y[:, j].copy(), nv, dmean, dcov,
                                  None if emulators is None else emulators[j], **kw))
    return LikelihoodContext(x, tuple(terms), model, mode, tuple(active or ()),
                             None if discrepancy is None else tuple(discrepancy), dict(info or {}))


def train_emulators(model: Simulator, prior, n_train: int, seed: int = 0, n_starts: int = 8) -> tuple[TrainedGP, ...]:
    """One GP per response over ``[x, theta]`` from a Latin hypercube of runs.

    Gaussian prior marginals are covered to four standard deviations.
    """
    lo, hi = prior.bounds
    mean, std = prior.mean(), prior.std()
    lo = np.where(np.isfinite(lo), lo, mean - 4 * std)
    hi = np.where(np.isfinite(hi), hi, mean + 4 * std)
    box = np.vstack([model.design_bounds, np.column_stack([lo, hi])])
    pts = latin_hypercube(box, n_train, seed)
    xs, ts = pts[:, :model.design_dim], pts[:, model.design_dim:]
    y = model(xs if model.design_dim else np.empty((n_train, 0)), ts)
    return tuple(fit_mle(pts, y[:, j], nugget=None, seed=seed + j, n_starts=n_starts)
                 for j in range(model.response_dim))


DEFAULT_PIPELINE = {
    "validation_fraction": 0.5,
    "split_seed": 0,
    "theta_ref": "nominal",
    "discrepancy": True,
    "mode": "direct",
    "n_train": 120,
    "gp_seed": 0,
    "gp_starts": 8,
}


def resolve_theta_ref(spec, model: Simulator, prior) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "nominal" and model.nominal is not None:
            return np.asarray(model.nominal, dtype=float)
        if spec in ("nominal", "prior_mean"):
            return prior.mean()
        raise ConfigError(f"theta_ref must be 'nominal', 'prior_mean' or a vector, got {spec!r}")
    ref = np.asarray(spec, dtype=float).ravel()
    if ref.size != model.calib_dim:
        raise DimensionError(f"theta_ref has {ref.size} values, expected {model.calib_dim}")
    return ref


def prepare_context(dataset: Sequence[ExperimentRecord], model: Simulator, prior,
                    config: dict | None = None) -> LikelihoodContext:
    """Full modular pipeline: split, fit the discrepancy, optionally emulate."""
    cfg = dict(DEFAULT_PIPELINE)
    cfg.update(config or {})
    unknown = set(cfg) - set(DEFAULT_PIPELINE)
    if unknown:
        raise ConfigError(f"unknown pipeline option(s): {sorted(unknown)}")
    dataset = list(dataset)
    info: dict = {"pipeline": {k: cfg[k] for k in DEFAULT_PIPELINE}}
    use_disc = bool(cfg["discrepancy"]) and model.design_dim > 0
    if use_disc:
        split = split_data(dataset, cfg["validation_fraction"], cfg["split_seed"])
        theta_ref = resolve_theta_ref(cfg["theta_ref"], model, prior)
        if not prior.in_support(theta_ref):
            raise ConfigError(f"theta_ref {theta_ref.tolist()} lies outside the prior support")
        disc = build_discrepancy(model, split.validation, theta_ref, seed=int(cfg["gp_seed"]),
                                 n_starts=int(cfg["gp_starts"]))
        calibration = split.calibration
        info.update(theta_ref=theta_ref.tolist(), validation_index=list(split.validation_index),
                    calibration_index=list(split.calibration_index))
    else:
        disc, calibration = None, dataset
        info.update(calibration_index=list(range(len(dataset))))
    emulators = None
    if cfg["mode"] == "emulator":
        emulators = train_emulators(model, prior, int(cfg["n_train"]), seed=int(cfg["gp_seed"]),
                                    n_starts=int(cfg["gp_starts"]))
    elif cfg["mode"] != "direct":
        raise ConfigError(f"mode must be 'direct' or 'emulator', got {cfg['mode']!r}")
    return make_context(calibration, model, disc, emulators, info=info)


def log_posterior(theta, ctx: LikelihoodContext, prior: IndependentPrior | TruncatedGaussianPrior) -> float:
    """``log p(theta) - 0.5 log|Sigma| - 0.5 r' Sigma^-1 r`` without the 2*pi constant."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        return -math.inf
    lp = prior.logpdf(theta)
    if not math.isfinite(lp):
        return -math.inf
    return lp + ctx.log_likelihood(theta)
