"""Adaptive random-walk Metropolis sampling and posterior summaries."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from ..errors import CalibrationError, ConfigError, ScaleCollapseError
from .priors import TruncatedGaussianPrior

DEFAULT_MCMC = {
    "n_steps": 50_000,
    "n_burn": None,          # None -> half of n_steps
    "seed": 0,
    "init": None,            # None -> prior mean
    "window": 500,           # covariance adaptation / collapse-check window
    "adapt_every": 50,       # step-size (Robbins-Monro) update interval
    "target_acceptance": 0.23,
    "initial_scale": 0.1,    # initial proposal STD as a fraction of prior STD
    "rhat_warn": 1.05,
}


def resolve_mcmc_config(config: dict | None) -> dict:
    cfg = dict(DEFAULT_MCMC)
    cfg.update(config or {})
    unknown = set(cfg) - set(DEFAULT_MCMC)
    if unknown:
        raise ConfigError(f"unknown MCMC option(s): {sorted(unknown)}")
    cfg["n_steps"] = int(cfg["n_steps"])
    cfg["n_burn"] = cfg["n_steps"] // 2 if cfg["n_burn"] is None else int(cfg["n_burn"])
    if cfg["n_burn"] < 0 or cfg["n_steps"] <= cfg["n_burn"]:
        raise ConfigError(f"need n_steps > n_burn >= 0, got n_steps={cfg['n_steps']}, n_burn={cfg['n_burn']}")
    if int(cfg["window"]) < 1 or int(cfg["adapt_every"]) < 1:
        raise ConfigError("window and adapt_every must be positive")
    if not 0.0 < float(cfg["target_acceptance"]) < 1.0:
        raise ConfigError("target_acceptance must lie in (0, 1)")
    return cfg


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    chain: np.ndarray                 # (n_kept, d)
    log_post: np.ndarray              # (n_kept,)
    acceptance_rate: float
    split_rhat: np.ndarray
    ess: np.ndarray
    seed: int
    config: dict
    lower: np.ndarray
    upper: np.ndarray
    param_names: tuple[str, ...] = ()
    burn_acceptance: float = float("nan")
    proposal_cov: np.ndarray | None = field(default=None, repr=False)
    warnings: tuple[str, ...] = ()

    @property
    def n_kept(self) -> int:
        return self.chain.shape[0]

    @property
    def converged(self) -> bool:
        r = self.split_rhat
        return bool(np.all(np.isfinite(r)) and np.all(r <= self.config.get("rhat_warn", 1.05)))


# ---------------------------------------------------------------- diagnostics


def split_rhat(chain: np.ndarray, n_segments: int = 4) -> np.ndarray:
    """Potential scale reduction computed between equal chain segments."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    m = chain.shape[0] // n_segments
    if m < 2:
        return np.full(chain.shape[1], np.nan)
    seg = chain[: m * n_segments].reshape(n_segments, m, -1)
    w = seg.var(axis=1, ddof=1).mean(axis=0)
    b = m * seg.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (m - 1) / m * w + b / m
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    # a constant segment set is trivially mixed
    return np.where((w == 0) & (b == 0), 1.0, r)


def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(chain: np.ndarray) -> np.ndarray:
    """Geyer's initial monotone sequence estimator, per column."""
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    n = chain.shape[0]
    out = np.empty(chain.shape[1])
    for k in range(chain.shape[1]):
        col = chain[:, k]
        if np.ptp(col) == 0:
            out[k] = np.nan
            continue
        rho = autocorrelation(col)
        npairs = n // 2
        gamma = rho[0 : 2 * npairs : 2] + rho[1 : 2 * npairs : 2]
        neg = np.flatnonzero(gamma <= 0)
        gamma = gamma[: neg[0]] if neg.size else gamma
        gamma = np.minimum.accumulate(gamma)
        tau = -1.0 + 2.0 * gamma.sum()
        out[k] = n / max(tau, 1.0 / n)
    return out


# ---------------------------------------------------------------- sampler


def run_mcmc(logpost: Callable[[np.ndarray], float], prior, config: dict | None = None,
             param_names=None) -> PosteriorSamples:
    """Adaptive random-walk Metropolis.

    During burn-in the global step scale follows a Robbins-Monro update
    toward the target acceptance every ``adapt_every`` steps, and every
    ``window`` steps the proposal shape is reset to ``2.38^2 / d`` times the
    empirical covariance of the latter half of the history.  The proposal is
    frozen after burn-in; only post-burn-in states are returned.
    """
    cfg = resolve_mcmc_config(config)
    d = prior.dim
    n_steps, n_burn = cfg["n_steps"], cfg["n_burn"]
    window, every, target = int(cfg["window"]), int(cfg["adapt_every"]), float(cfg["target_acceptance"])
    seed = int(cfg["seed"])
    x = np.asarray(prior.mean() if cfg["init"] is None else cfg["init"], dtype=float).copy()
    if x.shape != (d,):
        raise ConfigError(f"init must have {d} values")
    lp = float(logpost(x))
    if not math.isfinite(lp):
        raise CalibrationError(f"initial point {x.tolist()} has zero posterior density")

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_steps, d))
    log_u = np.log(rng.uniform(size=n_steps))
    prior_sd = prior.std()
    chol = np.diag(float(cfg["initial_scale"]) * prior_sd)
    log_lam = 0.0
    shape_scale = 2.38**2 / d

    kept = np.empty((n_steps - n_burn, d))
    kept_lp = np.empty(n_steps - n_burn)
    hist = np.empty((n_burn, d))
    batch_acc = window_acc = burn_acc = post_acc = 0
    n_updates = 0
    for i in range(n_steps):
        prop = x + math.exp(log_lam) * (chol @ z[i])
        lpp = float(logpost(prop))
        accepted = lpp - lp > log_u[i]
        if accepted:
            x, lp = prop, lpp
        if i < n_burn:
            hist[i] = x
            batch_acc += accepted
            window_acc += accepted
            burn_acc += accepted
            if (i + 1) % every == 0:
                n_updates += 1
                log_lam += (batch_acc / every - target) / math.sqrt(n_updates)
                batch_acc = 0
            if (i + 1) % window == 0:
                if window_acc == 0:
                    raise ScaleCollapseError(
                        f"no proposals accepted in burn-in steps {i + 2 - window}..{i + 1}; "
                        "lower initial_scale, start closer to the posterior mode or check the likelihood scale")
                window_acc = 0
                recent = hist[(i + 1) // 2 : i + 1]
                if recent.shape[0] > 2 * d:
                    emp = np.cov(recent, rowvar=False).reshape(d, d)
                    emp[np.diag_indices(d)] += 1e-12 * prior_sd**2
                    try:
                        chol = linalg.cholesky(shape_scale * emp, lower=True)
                        # a fresh empirical shape is already well scaled; a scale tuned
                        # for the previous shape would only mislead it
                        log_lam, n_updates = 0.0, 0
                    except linalg.LinAlgError:
                        pass
        else:
            post_acc += accepted
            kept[i - n_burn] = x
            kept_lp[i - n_burn] = lp
    n_post = n_steps - n_burn
    acc = post_acc / n_post
    if post_acc == 0:
        raise ScaleCollapseError("no proposals accepted after burn-in; the frozen proposal is too wide")
    lo, hi = prior.bounds
    rhat = split_rhat(kept)
    ess = effective_sample_size(kept)
    notes = []
    if np.any(rhat > float(cfg["rhat_warn"])):
        notes.append(f"split-Rhat above {cfg['rhat_warn']}: {np.round(rhat, 4).tolist()}")
    for name, val in (("chain", kept), ("log_post", kept_lp)):
        val.setflags(write=False)
    return PosteriorSamples(
        chain=kept, log_post=kept_lp, acceptance_rate=acc, split_rhat=rhat, ess=ess, seed=seed,
        config={k: (list(v) if isinstance(v, np.ndarray) else v) for k, v in cfg.items()},
        lower=lo, upper=hi, param_names=tuple(param_names) if param_names is not None else tuple(f"theta{k + 1}" for k in range(d)),
        burn_acceptance=burn_acc / n_burn if n_burn else float("nan"),
        proposal_cov=math.exp(2 * log_lam) * chol @ chol.T, warnings=tuple(notes),
    )


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    mean: np.ndarray
    std: np.ndarray
    correlation: np.ndarray
    degenerate: np.ndarray            # per parameter: zero spread
    histograms: tuple[tuple[np.ndarray, np.ndarray], ...]   # (edges, counts)
    n: int


def _chain_of(samples) -> np.ndarray:
    chain = samples.chain if isinstance(samples, PosteriorSamples) else samples
    chain = np.asarray(chain, dtype=float)
    return chain[:, None] if chain.ndim == 1 else chain


def summarize_posterior(samples, bins: int = 50, min_samples: int = 1000) -> PosteriorSummary:
    """Means, STDs (ddof=1), correlations and fixed-bin marginal histograms.

    Correlations involving a constant parameter are reported as 0 and that
    parameter is marked degenerate.
    """
    chain = _chain_of(samples)
    n, d = chain.shape
    if n < min_samples:
        raise ConfigError(f"posterior summary needs at least {min_samples} samples, got {n}")
    mean = chain.mean(axis=0)
    std = chain.std(axis=0, ddof=1)
    degenerate = std == 0
    corr = np.eye(d)
    ok = ~degenerate
    if ok.sum() > 1:
        c = np.corrcoef(chain[:, ok], rowvar=False)
        corr[np.ix_(ok, ok)] = c
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    hists = []
    for k in range(d):
        lo, hi = float(chain[:, k].min()), float(chain[:, k].max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        counts, edges = np.histogram(chain[:, k], bins=bins, range=(lo, hi))
        hists.append((edges, counts))
    return PosteriorSummary(mean, std, corr, degenerate, tuple(hists), n)


def posterior_to_prior(samples, marginals_only: bool = False, lower=None, upper=None,
                       min_samples: int = 1000) -> TruncatedGaussianPrior:
    """Moment-matched Gaussian truncated to the original support.

    A singular sample covariance falls back to its diagonal with a warning;
    a parameter with zero spread cannot be represented and raises.
    """
    chain = _chain_of(samples)
    n, d = chain.shape
    if n < min_samples:
        raise ConfigError(f"posterior_to_prior needs at least {min_samples} samples, got {n}")
    if lower is None or upper is None:
        if not isinstance(samples, PosteriorSamples):
            raise ConfigError("support bounds are required when passing a raw chain")
        lower = samples.lower if lower is None else lower
        upper = samples.upper if upper is None else upper
    mean = chain.mean(axis=0)
    cov = np.cov(chain, rowvar=False).reshape(d, d)
    var = np.diag(cov).copy()
    if np.any(var <= 0):
        bad = np.flatnonzero(var <= 0).tolist()
        raise CalibrationError(f"parameters {bad} have zero posterior variance; no Gaussian prior can represent them")
    if marginals_only:
        cov = np.diag(var)
    else:
        eig = np.linalg.eigvalsh(cov)
        if eig[0] <= 1e-12 * eig[-1]:
            warnings.warn("sample covariance is singular; using its diagonal", RuntimeWarning, stacklevel=2)
            cov = np.diag(var)
    return TruncatedGaussianPrior(mean, cov, np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
