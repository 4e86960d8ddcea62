"""Variance-based global sensitivity analysis.

Main effects use the Saltelli (2010) pick-freeze estimator and total effects
the Jansen estimator; both are normalised by the variance of the pooled
``A`` and ``B`` outputs.  :func:`brute_force_sobol` evaluates the nested
conditional moments literally and serves as an independent oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from .distributions import Empirical, Gaussian, Uniform
from .emulator import TrainedGP, predict
from .errors import ConfigError, DimensionError, UndefinedIndexError
from .model import Simulator

_EPS = 1e-12


@dataclass
class SobolTable:
    main: np.ndarray          # (inputs, responses)
    total: np.ndarray
    input_names: tuple[str, ...]
    response_labels: tuple[str, ...]
    estimator_n: int
    ci_main: np.ndarray | None = None
    ci_total: np.ndarray | None = None
    second_order: dict[tuple[int, int], np.ndarray] | None = None
    variance: np.ndarray | None = None
    method: str = "saltelli-jansen"
    extras: dict = field(default_factory=dict)

    @property
    def main_sum(self) -> np.ndarray:
        return self.main.sum(axis=0)

    @property
    def total_sum(self) -> np.ndarray:
        return self.total.sum(axis=0)

    @property
    def ci_halfwidth(self) -> np.ndarray:
        if self.ci_main is None:
            return np.zeros_like(self.main)
        return np.maximum(self.ci_main, self.ci_total)

    def cell(self, name: str, response: str, which: str = "total") -> float:
        i = self.input_names.index(name)
        j = self.response_labels.index(response)
        return float(getattr(self, which)[i, j])


# ---------------------------------------------------------------- sampling


@dataclass(frozen=True)
class SaltelliDesign:
    A: np.ndarray
    B: np.ndarray
    AB: np.ndarray            # (d, N, d): AB[i] is A with column i from B
    BA: np.ndarray | None     # (d, N, d): BA[i] is B with column i from A

    @property
    def n_evaluations(self) -> int:
        blocks = 2 + self.AB.shape[0] * (1 if self.BA is None else 2)
        return blocks * self.A.shape[0]


def _check_dists(dists) -> list:
    out = list(dists)
    for d in out:
        if not isinstance(d, (Uniform, Gaussian, Empirical)):
            raise ConfigError(f"unsupported input distribution {d!r}")
    if not out:
        raise ConfigError("at least one input distribution is required")
    return out


def _check_n(n: int) -> int:
    n = int(n)
    if n < 64 or n & (n - 1):
        raise ConfigError(f"N must be a power of two and at least 64, got {n}")
    return n


def saltelli_design(dists: Sequence, n: int, seed: int, second_order: bool = False) -> SaltelliDesign:
    """Independent ``A``/``B`` blocks from a scrambled Sobol' sequence of
    dimension ``2d``, mapped through each input's quantile function."""
    dists = _check_dists(dists)
    n = _check_n(n)
    d = len(dists)
    u = qmc.Sobol(d=2 * d, scramble=True, seed=np.random.default_rng(seed)).random(n)
    u = np.clip(u, _EPS, 1 - _EPS)
    a = np.column_stack([dist.ppf(u[:, i]) for i, dist in enumerate(dists)])
    b = np.column_stack([dist.ppf(u[:, d + i]) for i, dist in enumerate(dists)])
    ab = np.repeat(a[None], d, axis=0)
    for i in range(d):
        ab[i, :, i] = b[:, i]
    ba = None
    if second_order:
        ba = np.repeat(b[None], d, axis=0)
        for i in range(d):
            ba[i, :, i] = a[:, i]
    return SaltelliDesign(a, b, ab, ba)


# ---------------------------------------------------------------- model adaptor


def response_function(model, x=None) -> tuple[Callable[[np.ndarray], np.ndarray], tuple[str, ...] | None]:
    """Normalise ``model`` into ``f(Theta) -> (n, m)``.

    Accepts a :class:`Simulator` (design variables frozen at ``x``, default
    the design centre), a sequence of :class:`TrainedGP` (one per response;
    queries are ``[x, theta]``), or a plain callable.
    """
    if isinstance(model, Simulator):
        return model.theta_function(x), model.response_labels
    if isinstance(model, TrainedGP):
        model = [model]
    if isinstance(model, (list, tuple)) and model and all(isinstance(g, TrainedGP) for g in model):
        gps = list(model)
        prefix = np.empty(0) if x is None else np.ravel(np.asarray(x, dtype=float))

        def f(theta):
            q = np.hstack([np.broadcast_to(prefix, (theta.shape[0], prefix.size)), theta])
            return np.column_stack([predict(g, q, full_cov=False)[0] for g in gps])

        return f, None
    if callable(model):
        return model, None
    raise ConfigError(f"cannot use {type(model).__name__} as a model for sensitivity analysis")


def _evaluate(f, theta: np.ndarray) -> np.ndarray:
    y = np.asarray(f(theta), dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != theta.shape[0]:
        raise DimensionError("model returned the wrong number of rows")
    return y


def _labels(names, count, prefix):
    if names is None:
        return tuple(f"{prefix}{i + 1}" for i in range(count))
    names = tuple(names)
    if len(names) != count:
        raise DimensionError(f"expected {count} names, got {len(names)}")
    return names


def _indices(fa, fb, fab):
    """Main and total effects per (input, response) from stored outputs."""
    var = np.var(np.concatenate([fa, fb]), axis=0)
    main = np.mean(fb[None] * (fab - fa[None]), axis=1) / var
    total = 0.5 * np.mean((fa[None] - fab) ** 2, axis=1) / var
    return main, total, var


def estimate_sobol(model, dists: Sequence, n: int = 2**14, seed: int = 0, with_second_order: bool = False,
                   x=None, input_names=None, response_labels=None, n_bootstrap: int = 200,
                   confidence: float = 0.95) -> SobolTable:
    """Pick-freeze Monte Carlo estimates of first-order and total indices.

    Bootstrap half-widths come from ``n_bootstrap`` row resamples (percentile
    method).  Negative estimates are returned unclamped.
    """
    dists = _check_dists(dists)
    f, labels = response_function(model, x)
    dsg = saltelli_design(dists, n, seed, second_order=with_second_order)
    d = len(dists)
    fa = _evaluate(f, dsg.A)
    fb = _evaluate(f, dsg.B)
    fab = np.stack([_evaluate(f, dsg.AB[i]) for i in range(d)])
    if fa.shape[1] != fb.shape[1]:
        raise DimensionError("inconsistent response count")
    var = np.var(np.concatenate([fa, fb]), axis=0)
    scale = np.maximum(np.abs(np.concatenate([fa, fb])).max(axis=0), 1.0)
    if np.any(var <= 1e-24 * scale**2):
        bad = np.flatnonzero(var <= 1e-24 * scale**2).tolist()
        raise UndefinedIndexError(f"output variance is zero for response(s) {bad}; indices undefined")
    main, total, var = _indices(fa, fb, fab)

    # percentile bootstrap over pick-freeze rows
    rng = np.random.default_rng([seed, 7])
    boot_main = np.empty((n_bootstrap,) + main.shape)
    boot_total = np.empty_like(boot_main)
    for r in range(n_bootstrap):
        idx = rng.integers(0, n, n)
        boot_main[r], boot_total[r], _ = _indices(fa[idx], fb[idx], fab[:, idx])
    q = [(1 - confidence) / 2 * 100, (1 + confidence) / 2 * 100]
    lo, hi = np.percentile(boot_main, q, axis=0)
    ci_main = 0.5 * (hi - lo)
    lo, hi = np.percentile(boot_total, q, axis=0)
    ci_total = 0.5 * (hi - lo)

    second = None
    if with_second_order:
        fba = np.stack([_evaluate(f, dsg.BA[i]) for i in range(d)])
        f0sq = np.mean(fa * fb, axis=0)
        second = {}
        for i in range(d):
            for j in range(i + 1, d):
                closed = (np.mean(fba[i] * fab[j], axis=0) - f0sq) / var
                second[(i, j)] = closed - main[i] - main[j]

    m = fa.shape[1]
    return SobolTable(
        main=main, total=total,
        input_names=_labels(input_names, d, "X"),
        response_labels=_labels(response_labels if response_labels is not None else labels, m, "Y"),
        estimator_n=n, ci_main=ci_main, ci_total=ci_total, second_order=second, variance=var,
    )


def brute_force_sobol(model, dists: Sequence, n_outer: int = 512, n_inner: int = 512, seed: int = 0,
                      x=None, input_names=None, response_labels=None) -> SobolTable:
    """Double-loop Monte Carlo evaluation of the conditional moments.

    For each input ``i``:

    * main effect: variance over ``X_i`` of the inner mean over ``X_~i``;
    * total effect: mean over ``X_~i`` of the inner variance over ``X_i``.

    Every draw is Latin-hypercube stratified.  The outer variance of inner
    means is bias-corrected by the inner
    variance over ``n_inner``.  ``Var(Y)`` comes from an independent sample
    of ``n_outer * n_inner`` points so that the identity
    ``E[Var(Y|X_i)] + Var[E(Y|X_i)] = Var(Y)`` is a genuine check; the terms
    are kept in ``extras``.
    """
    dists = _check_dists(dists)
    f, labels = response_function(model, x)
    d = len(dists)
    rng = np.random.default_rng(seed)

    def draw(size):
        # Latin-hypercube stratified draws keep the outer-loop noise low
        u = qmc.LatinHypercube(d=d, seed=rng).random(size)
        u = np.clip(u, _EPS, 1 - _EPS)
        return np.column_stack([dist.ppf(u[:, k]) for k, dist in enumerate(dists)])

    y_indep = _evaluate(f, draw(n_outer * n_inner))
    var_y = np.var(y_indep, axis=0, ddof=1)
    m = y_indep.shape[1]
    if np.any(var_y <= 0):
        raise UndefinedIndexError("output variance is zero; indices undefined")

    main = np.empty((d, m))
    total = np.empty((d, m))
    var_of_mean = np.empty((d, m))
    mean_of_var = np.empty((d, m))
    for i in range(d):
        # fix X_i in the outer loop, vary the rest
        outer = draw(n_outer)[:, i]
        inner = draw(n_outer * n_inner)
        inner[:, i] = np.repeat(outer, n_inner)
        y = _evaluate(f, inner).reshape(n_outer, n_inner, m)
        inner_var = y.var(axis=1, ddof=1)
        v_mean = y.mean(axis=1).var(axis=0, ddof=1) - inner_var.mean(axis=0) / n_inner
        e_var = inner_var.mean(axis=0)
        var_of_mean[i] = v_mean
        mean_of_var[i] = e_var
        main[i] = v_mean / var_y

        # fix X_~i in the outer loop, vary X_i
        outer = draw(n_outer)
        inner = np.repeat(outer, n_inner, axis=0)
        inner[:, i] = draw(n_outer * n_inner)[:, i]
        y = _evaluate(f, inner).reshape(n_outer, n_inner, m)
        total[i] = y.var(axis=1, ddof=1).mean(axis=0) / var_y

    return SobolTable(
        main=main, total=total,
        input_names=_labels(input_names, d, "X"),
        response_labels=_labels(response_labels if response_labels is not None else labels, m, "Y"),
        estimator_n=n_outer * n_inner, variance=var_y, method="brute-force",
        extras={"var_of_conditional_mean": var_of_mean, "mean_of_conditional_var": mean_of_var},
    )


@dataclass
class InteractionReport:
    flags: np.ndarray             # (inputs, responses) bool
    gap: np.ndarray               # clamped T - S
    response_interaction: np.ndarray  # (responses,) bool
    input_names: tuple[str, ...]
    response_labels: tuple[str, ...]

    def flagged_pairs(self) -> set[tuple[str, str]]:
        return {(self.input_names[i], self.response_labels[j]) for i, j in zip(*np.nonzero(self.flags))}


def detect_interactions(table: SobolTable, gap_threshold: float = 0.05, sum_tolerance: float = 0.05) -> InteractionReport:
    """Flag inputs whose total effect exceeds the main effect by more than
    ``gap_threshold``, and responses whose main-effect sum falls below
    ``1 - sum_tolerance`` or total-effect sum exceeds ``1 + sum_tolerance``."""
    main = np.clip(table.main, 0.0, 1.0)
    total = np.clip(table.total, 0.0, 1.0)
    gap = total - main
    flags = gap > gap_threshold
    resp = (main.sum(axis=0) < 1 - sum_tolerance) | (total.sum(axis=0) > 1 + sum_tolerance)
    return InteractionReport(flags, gap, resp, table.input_names, table.response_labels)


def table_from_values(main, total, input_names, response_labels) -> SobolTable:
    """Wrap published or externally computed indices as a table."""
    return SobolTable(np.asarray(main, dtype=float), np.asarray(total, dtype=float), tuple(input_names),
                      tuple(response_labels), estimator_n=0, method="fixture")
