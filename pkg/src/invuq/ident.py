"""Identifiability studies over response subsets.

A sweep calibrates once per nonempty subset of the measured responses and
tabulates posterior means and STDs; the STD is the identifiability measure.
The same fitted discrepancy (and emulator) models are shared by every
subset, only the active-response mask changes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .calib import (
    LikelihoodContext,
    PosteriorSamples,
    log_posterior,
    posterior_to_prior,
    run_mcmc,
    summarize_posterior,
)
from .calib.mcmc import resolve_mcmc_config
from .distributions import Empirical
from .errors import CalibrationError, ConfigError, InvuqError
from .sa import SobolTable, estimate_sobol


# ---------------------------------------------------------------- subsets


def enumerate_subsets(response_labels: Sequence[str]) -> list[tuple[int, ...]]:
    """All nonempty index subsets, by size and then lexicographically."""
    m = len(response_labels)
    if m == 0:
        raise ConfigError("at least one response is required")
    if m > 16:
        raise ConfigError(f"at most 16 responses are supported, got {m}")
    return [c for k in range(1, m + 1) for c in itertools.combinations(range(m), k)]


def subset_label(subset: Sequence[int], m: int | None = None) -> str:
    """1-based digits, e.g. ``(0, 2, 3) -> "134"``; dash-joined beyond 9 responses."""
    idx = sorted(set(int(i) for i in subset))
    if (m or (max(idx) + 1)) <= 9:
        return "".join(str(i + 1) for i in idx)
    return "-".join(str(i + 1) for i in idx)


def parse_subset(label: str, m: int) -> tuple[int, ...]:
    parts = label.split("-") if "-" in label or m > 9 else list(label)
    try:
        idx = sorted(set(int(p) - 1 for p in parts))
    except ValueError:
        raise ConfigError(f"cannot parse response subset {label!r}") from None
    if not idx or idx[0] < 0 or idx[-1] >= m:
        raise ConfigError(f"subset {label!r} refers to responses outside 1..{m}")
    return tuple(idx)


# ---------------------------------------------------------------- sweep


@dataclass(frozen=True, eq=False)
class SubsetStudyResult:
    label: str
    subset: tuple[int, ...]
    responses: tuple[str, ...]
    param_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    correlation: np.ndarray | None
    seed: int
    acceptance_rate: float = float("nan")
    split_rhat: np.ndarray | None = None
    ess: np.ndarray | None = None
    converged: bool = False
    error: str | None = None
    samples: PosteriorSamples | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None


def _calibrate_subset(context: LikelihoodContext, prior, subset, index, mcmc_config, base_seed, keep_chain):
    labels = context.labels
    responses = tuple(labels[i] for i in subset)
    names = tuple(context.simulator.param_names)
    label = subset_label(subset, len(labels))
    seed = int(base_seed) + index
    cfg = dict(mcmc_config or {})
    cfg["seed"] = seed
    try:
        ctx = context.with_subset(responses)
        samples = run_mcmc(lambda th: log_posterior(th, ctx, prior), prior, cfg, param_names=names)
        summary = summarize_posterior(samples)
    except InvuqError as exc:
        nan = np.full(len(names), np.nan)
        return SubsetStudyResult(label, tuple(subset), responses, names, nan, nan.copy(), None, seed,
                                 error=f"{type(exc).__name__}: {exc}")
    return SubsetStudyResult(
        label, tuple(subset), responses, names, summary.mean, summary.std, summary.correlation, seed,
        acceptance_rate=samples.acceptance_rate, split_rhat=samples.split_rhat, ess=samples.ess,
        converged=samples.converged, samples=samples if keep_chain else None,
    )


def run_subset_study(context: LikelihoodContext, prior, subsets: Sequence[Sequence[int]] | None = None,
                     mcmc_config: dict | None = None, base_seed: int = 0, n_jobs: int = 1,
                     keep_chains: bool = True) -> list[SubsetStudyResult]:
    """One calibration per response subset, seeded ``base_seed + position``.

    Failed subsets are kept with ``error`` set; chains that miss the
    split-Rhat threshold are kept with ``converged=False``.  Results come
    back in subset order regardless of ``n_jobs``.
    """
    m = len(context.labels)
    if subsets is None:
        subsets = enumerate_subsets(context.labels)
    subsets = [tuple(sorted(set(int(i) for i in s))) for s in subsets]
    for s in subsets:
        if not s or s[0] < 0 or s[-1] >= m:
            raise ConfigError(f"subset {s} refers to responses outside the dataset")
    resolve_mcmc_config(mcmc_config)
    jobs = [delayed(_calibrate_subset)(context, prior, s, i, mcmc_config, base_seed, keep_chains)
            for i, s in enumerate(subsets)]
    if n_jobs == 1 or len(jobs) == 1:
        return [fn(*a, **kw) for fn, a, kw in jobs]
    return list(Parallel(n_jobs=n_jobs)(jobs))


# ---------------------------------------------------------------- sensitivity vs identifiability


@dataclass(frozen=True)
class IdentifiabilityScore:
    param_names: tuple[str, ...]
    rho: np.ndarray          # NaN where undefined
    undefined: np.ndarray    # bool
    x: np.ndarray            # (subsets, params) max included total effect
    y: np.ndarray            # (subsets, params) negative posterior STD


def sensitivity_identifiability_score(sobol: SobolTable, study: Sequence[SubsetStudyResult]) -> IdentifiabilityScore:
    """Spearman correlation across subsets between the largest total effect
    among the included responses and the negative posterior STD."""
    study = [r for r in study if r.ok]
    if not study:
        raise ConfigError("no successful subset results to score")
    names = study[0].param_names
    if tuple(sobol.input_names) != tuple(names):
        raise ConfigError(f"Sobol' inputs {sobol.input_names} do not match study parameters {names}")
    cols = {lbl: j for j, lbl in enumerate(sobol.response_labels)}
    unknown = sorted({r for res in study for r in res.responses} - set(cols))
    if unknown:
        raise ConfigError(f"study responses {unknown} are not in the Sobol' table {sobol.response_labels}")
    x = np.empty((len(study), len(names)))
    y = np.empty_like(x)
    for a, res in enumerate(study):
        idx = [cols[r] for r in res.responses]
        x[a] = sobol.total[:, idx].max(axis=1)
        y[a] = -res.std
    rho = np.full(len(names), np.nan)
    undefined = np.zeros(len(names), dtype=bool)
    for k in range(len(names)):
        if len(study) < 2 or np.ptp(x[:, k]) == 0 or np.ptp(y[:, k]) == 0:
            undefined[k] = True
            continue
        rho[k] = stats.spearmanr(x[:, k], y[:, k]).statistic
    return IdentifiabilityScore(tuple(names), rho, undefined, x, y)


# ---------------------------------------------------------------- fake identifiability


@dataclass(frozen=True)
class IdentifiabilityFlag:
    param: str
    subset: str
    mean_shift: float        # |mean - reference mean| / reference STD
    std_ratio: float         # STD / reference STD
    classification: str      # "fake" (tight but shifted) or "poor" (wide and shifted)


@dataclass(frozen=True)
class FlagReport:
    flags: tuple[IdentifiabilityFlag, ...]
    notes: tuple[str, ...]
    mean_shift_threshold: float
    std_ratio_threshold: float

    def lookup(self, param: str, subset: str) -> IdentifiabilityFlag | None:
        for f in self.flags:
            if f.param == param and f.subset == subset:
                return f
        return None

    def fake(self) -> list[IdentifiabilityFlag]:
        return [f for f in self.flags if f.classification == "fake"]


def flag_fake_identifiability(study: Sequence[SubsetStudyResult], reference: SubsetStudyResult,
                              mean_shift_threshold: float = 1.5, std_ratio: float = 1.5) -> FlagReport:
    """Flag posteriors whose mean moved away from the reference.

    A (parameter, subset) pair is flagged when the mean differs from the
    reference mean by more than ``mean_shift_threshold`` reference STDs.  It
    is "fake" if its STD is within ``std_ratio`` times the reference STD and
    "poor" otherwise.  Parameters with zero reference STD are skipped.
    """
    if reference is None:
        raise ConfigError("a reference result is required")
    flags, notes = [], []
    for k, name in enumerate(reference.param_names):
        ref_sd = float(reference.std[k])
        if not ref_sd > 0:
            notes.append(f"{name}: reference STD is zero, skipped")
            continue
        for res in study:
            if not res.ok or res.label == reference.label:
                continue
            shift = abs(float(res.mean[k]) - float(reference.mean[k])) / ref_sd
            ratio = float(res.std[k]) / ref_sd
            if shift > mean_shift_threshold:
                cls = "fake" if ratio <= std_ratio else "poor"
                flags.append(IdentifiabilityFlag(name, res.label, shift, ratio, cls))
    return FlagReport(tuple(flags), tuple(notes), float(mean_shift_threshold), float(std_ratio))


def result_from_table(label: str, param_names: Sequence[str], mean, std, m: int = 4) -> SubsetStudyResult:
    """Wrap published or stored means/STDs as a study result."""
    subset = parse_subset(label, m)
    return SubsetStudyResult(label, subset, tuple(str(i + 1) for i in subset), tuple(param_names),
                             np.asarray(mean, dtype=float), np.asarray(std, dtype=float), None, -1,
                             converged=True)


# ---------------------------------------------------------------- report


@dataclass(frozen=True, eq=False)
class IdentifiabilityReport:
    results: tuple[SubsetStudyResult, ...]
    reference: SubsetStudyResult
    best_subset: dict
    worst_subset: dict
    score: IdentifiabilityScore | None
    flags: FlagReport
    iteration: int = 1


def build_report(results: Sequence[SubsetStudyResult], sobol: SobolTable | None = None,
                 reference_label: str | None = None, mean_shift_threshold: float = 1.5,
                 std_ratio: float = 1.5, iteration: int = 1) -> IdentifiabilityReport:
    """Assemble best/worst subsets, the rank score and the flags."""
    results = tuple(results)
    if not results:
        raise ConfigError("no results to report")
    if reference_label is None:
        reference_label = max(results, key=lambda r: len(r.subset)).label
    ref = next((r for r in results if r.label == reference_label), None)
    if ref is None or not ref.ok:
        raise CalibrationError(f"reference subset {reference_label!r} is missing or failed")
    ok = [r for r in results if r.ok]
    best, worst = {}, {}
    for k, name in enumerate(ref.param_names):
        stds = [(float(r.std[k]), r.label) for r in ok]
        best[name] = min(stds)[1]
        worst[name] = max(stds)[1]
    score = sensitivity_identifiability_score(sobol, ok) if sobol is not None else None
    flags = flag_fake_identifiability(ok, ref, mean_shift_threshold, std_ratio)
    return IdentifiabilityReport(results, ref, best, worst, score, flags, iteration)


# ---------------------------------------------------------------- iteration


@dataclass(frozen=True, eq=False)
class IterationResult:
    iteration: int
    prior: object
    results: tuple[SubsetStudyResult, ...]
    reference: SubsetStudyResult
    sobol: SobolTable | None
    std_ratio: np.ndarray | None      # reference STD / previous reference STD


def empirical_marginals(samples: PosteriorSamples, max_values: int = 20_000) -> tuple[Empirical, ...]:
    """Per-parameter resampling distributions from an evenly thinned chain."""
    chain = samples.chain
    step = max(1, math.ceil(chain.shape[0] / max_values))
    return tuple(Empirical(chain[::step, k]) for k in range(chain.shape[1]))


def iterate_inverse_uq(context: LikelihoodContext, prior0, n_iter: int, mcmc_config: dict | None = None,
                       base_seed: int = 0, subsets: Sequence[Sequence[int]] | None = None,
                       sobol_config: dict | None = None, tol: float = 0.05, marginals_only: bool = False,
                       n_jobs: int = 1) -> list[IterationResult]:
    """Repeat the calibration using each reference posterior as the next prior.

    Each iteration runs ``subsets`` (default: only the full response set);
    iteration ``k`` uses seeds from ``base_seed + 1000 (k - 1)``.  After each
    iteration Sobol' indices are recomputed with empirical marginals from
    the reference chain unless ``sobol_config`` is ``False``.  The loop stops
    early once every parameter STD changes by less than ``tol`` relative.
    """
    if n_iter < 1:
        raise ConfigError("n_iter must be at least 1")
    m = len(context.labels)
    full = tuple(range(m))
    if subsets is None:
        subsets = [full]
    subsets = [tuple(sorted(s)) for s in subsets]
    if full not in subsets:
        raise ConfigError("the full response set must be among the iterated subsets")
    sobol_cfg = None if sobol_config is False else {"n": 2**14, "seed": 0, "x": None, **(sobol_config or {})}
    prior = prior0
    out: list[IterationResult] = []
    prev_sd = None
    for k in range(1, n_iter + 1):
        results = run_subset_study(context, prior, subsets, mcmc_config, base_seed + 1000 * (k - 1), n_jobs)
        ref = next(r for r in results if r.subset == full)
        if not ref.ok:
            raise CalibrationError(f"iteration {k}: full-subset calibration failed: {ref.error}")
        table = None
        if sobol_cfg is not None:
            table = estimate_sobol(context.simulator, empirical_marginals(ref.samples), n=int(sobol_cfg["n"]),
                                   seed=int(sobol_cfg["seed"]), x=sobol_cfg["x"],
                                   input_names=context.simulator.param_names,
                                   response_labels=context.simulator.response_labels)
        ratio = None if prev_sd is None else ref.std / prev_sd
        out.append(IterationResult(k, prior, tuple(results), ref, table, ratio))
        if ratio is not None and np.all(np.abs(ratio - 1.0) < tol):
            break
        prev_sd = ref.std
        if k < n_iter:
            try:
                prior = posterior_to_prior(ref.samples, marginals_only=marginals_only)
            except InvuqError as exc:
                raise CalibrationError(f"iteration {k}: cannot form the next prior: {exc}") from exc
    return out
