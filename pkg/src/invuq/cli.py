"""Command-line driver.

Subcommands ``sa``, ``calibrate``, ``sweep``, ``iterate``, ``gen-data`` and
``report``.  Configuration comes from a YAML or JSON file, then ``--set``
overrides and the convenience flags, in that order.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 partial sweep failure under
``--strict``.
"""
from __future__ import annotations

import argparse
import copy
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, io, plots
from .calib import (
    DEFAULT_MCMC,
    DEFAULT_PIPELINE,
    IndependentPrior,
    prepare_context,
    prior_from_dict,
)
from .distributions import from_dict as dist_from_dict
from .errors import ConfigError, InvuqError
from .ident import (
    build_report,
    enumerate_subsets,
    iterate_inverse_uq,
    parse_subset,
    run_subset_study,
    subset_label,
)
from .model import (
    DEFAULT_BENCHMARK_CONFIG,
    ExperimentRecord,
    builtin_model,
    generate_dataset,
    make_benchmark,
)
from .sa import detect_interactions, estimate_sobol

OUTPUT_ENV = "INVUQ_OUTPUT_ROOT"

DEFAULT_CONFIG = {
    "model": {"name": "benchmark", "params": {}},
    "benchmark": dict(DEFAULT_BENCHMARK_CONFIG),
    "prior": None,
    "data": {"path": None, "records": None, "n_points": 40, "seed": None},
    "pipeline": dict(DEFAULT_PIPELINE),
    "mcmc": {k: v for k, v in DEFAULT_MCMC.items() if k != "seed"},
    "sa": {"n": 2**14, "seed": None, "second_order": False, "n_bootstrap": 200, "x": None,
           "gap_threshold": 0.05, "sum_tolerance": 0.05},
    "ident": {"subset": None, "subsets": None, "reference": None, "mean_shift_threshold": 1.5,
              "std_ratio": 1.5, "n_iter": 2, "tol": 0.05, "marginals_only": False, "iterate_subsets": "full"},
    "seed": 0,
    "output": None,
}
# blocks replaced wholesale rather than merged key by key
ATOMIC = {"benchmark", "prior"}
FREE_FORM = {("model", "params")}


class ExitError(Exception):
    def __init__(self, code: int, stage: str, message: str):
        super().__init__(message)
        self.code, self.stage = code, stage


# ---------------------------------------------------------------- configuration


def _merge(base: dict, new: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, val in new.items():
        where = ".".join(path + (key,))
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ATOMIC and path + (key,) not in FREE_FORM:
            out[key] = _merge(base[key], val, path + (key,))
        else:
            out[key] = copy.deepcopy(val)
    return out


def _apply_override(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node, ref = cfg, DEFAULT_CONFIG
    for depth, k in enumerate(keys[:-1]):
        free = ref is None or k in ATOMIC or tuple(keys[: depth + 1]) in FREE_FORM
        if not free and (not isinstance(ref.get(k), dict)):
            raise ConfigError(f"unknown config key {dotted!r}")
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
        ref = None if free else ref[k]
    if ref is not None and keys[-1] not in ref:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    return doc


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        cfg = _merge(cfg, load_config_file(args.config))
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    flag_map = {"model": "model.name", "n": "sa.n", "seed": "seed", "n_steps": "mcmc.n_steps",
                "n_iter": "ident.n_iter", "subset": "ident.subset", "data": "data.path", "out": "output"}
    for attr, key in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    for key, val in overrides.items():
        _apply_override(cfg, key, val)
    return cfg


def output_dir(cfg: dict, command: str) -> Path:
    if cfg.get("output"):
        return Path(cfg["output"])
    root = os.environ.get(OUTPUT_ENV, "invuq_output")
    return Path(root) / command


# ---------------------------------------------------------------- model, prior, data


def build_model(cfg: dict):
    """Returns (simulator, truth or None)."""
    name = cfg["model"]["name"]
    if name == "benchmark":
        truth = make_benchmark(cfg["benchmark"])
        return truth.simulator, truth
    return builtin_model(name, cfg["model"].get("params") or {}), None


def build_prior(cfg: dict, sim):
    spec = cfg.get("prior")
    if spec is None:
        return IndependentPrior(tuple(sim.calib_dists))
    if not isinstance(spec, dict):
        raise ConfigError("prior must be a mapping")
    if "overrides" in spec:
        marg = list(sim.calib_dists)
        for pname, dspec in spec["overrides"].items():
            if pname not in sim.param_names:
                raise ConfigError(f"prior override names unknown parameter {pname!r}")
            marg[sim.param_names.index(pname)] = dist_from_dict(dspec)
        return IndependentPrior(tuple(marg))
    prior = prior_from_dict(spec, dim=sim.calib_dim)
    if prior.dim != sim.calib_dim:
        raise ConfigError(f"prior has {prior.dim} dimensions, model has {sim.calib_dim}")
    return prior


def build_dataset(cfg: dict, sim, truth):
    data = cfg["data"]
    if data.get("path"):
        records = io.load_dataset(data["path"])
    elif data.get("records"):
        records = [ExperimentRecord(np.asarray(r.get("x", []), dtype=float), r["observed"], r["noise_std"],
                                    sim.response_labels) for r in data["records"]]
    elif truth is not None:
        seed = data.get("seed")
        records = generate_dataset(truth, seed=None if seed is None else int(seed), n_points=int(data["n_points"]))
    else:
        raise ConfigError(f"model {sim.name!r} needs data.path or data.records")
    if tuple(records[0].labels) != tuple(sim.response_labels):
        raise ConfigError(f"dataset responses {records[0].labels} do not match model {sim.response_labels}")
    return records


def build_context(cfg: dict, records, sim, prior):
    # models without design variables get no discrepancy term
    return prepare_context(records, sim, prior, cfg["pipeline"])


def _subset_from(cfg: dict, sim) -> tuple[int, ...]:
    lbl = cfg["ident"].get("subset")
    m = sim.response_dim
    if lbl is None:
        return tuple(range(m))
    return parse_subset(str(lbl), m)


def _subsets_from(cfg: dict, sim) -> list[tuple[int, ...]]:
    spec = cfg["ident"].get("subsets")
    if spec is None or spec == "all":
        return enumerate_subsets(sim.response_labels)
    return [parse_subset(str(s), sim.response_dim) for s in spec]


# ---------------------------------------------------------------- writers


class Run:
    """Collects output files, stage timings and notes for the manifest."""

    def __init__(self, command: str, cfg: dict, outdir: Path):
        self.command, self.cfg, self.outdir = command, cfg, outdir
        self.files: list[Path] = []
        self.stages: list[dict] = []
        self.notes: list[str] = []
        self._t = None
        self.stage = "setup"
        outdir.mkdir(parents=True, exist_ok=True)

    def begin(self, stage: str):
        self.stage = stage
        self._t = time.perf_counter()

    def end(self):
        self.stages.append({"name": self.stage, "seconds": round(time.perf_counter() - self._t, 3)})

    def add(self, path) -> Path:
        self.files.append(Path(path))
        return Path(path)

    def manifest(self, **extra) -> Path:
        return io.write_manifest(self.outdir, self.files, tool="invuq", version=__version__, command=self.command,
                                 config=self.cfg, seeds={"base": self.cfg["seed"]}, stages=self.stages,
                                 notes=self.notes, **extra)


def _sobol_outputs(run: Run, table, cfg, prefix: str = "", directory: Path | None = None):
    d = directory or run.outdir
    run.add(io.write_sobol_csv(d / f"{prefix}sobol.csv", table))
    if table.ci_main is not None:
        run.add(io.write_sobol_ci_csv(d / f"{prefix}sobol_ci.csv", table))
    rep = detect_interactions(table, cfg["sa"]["gap_threshold"], cfg["sa"]["sum_tolerance"])
    rows = []
    for i, name in enumerate(table.input_names):
        for j, resp in enumerate(table.response_labels):
            rows.append([name, resp, float(table.main[i, j]), float(table.total[i, j]),
                         float(table.total[i, j] - table.main[i, j]), int(rep.flags[i, j])])
    run.add(io.write_csv(d / f"{prefix}interactions.csv", ["input", "response", "main", "total", "gap", "flagged"], rows))
    rows = [[resp, float(table.main_sum[j]), float(table.total_sum[j]), int(rep.response_interaction[j])]
            for j, resp in enumerate(table.response_labels)]
    run.add(io.write_csv(d / f"{prefix}interaction_summary.csv", ["response", "main_sum", "total_sum", "interaction"], rows))
    if table.second_order:
        rows = [[table.input_names[i], table.input_names[j], *np.asarray(v, dtype=float)]
                for (i, j), v in sorted(table.second_order.items())]
        run.add(io.write_csv(d / f"{prefix}sobol_second_order.csv",
                             ["input_i", "input_j", *table.response_labels], rows))
    _sobol_plots(run, table, d, prefix)


def _sobol_plots(run: Run, table, d: Path, prefix: str = ""):
    for which in ("main", "total"):
        vals = getattr(table, which).T
        svg = plots.bar_chart(table.response_labels, table.input_names, vals,
                              title=f"{which.capitalize()} effect Sobol' indices", ylabel="index")
        run.add(plots.write_svg(d / f"{prefix}sobol_{which}.svg", svg))


def _ranges(prior, chain):
    lo, hi = prior.bounds if hasattr(prior, "bounds") else (None, None)
    out = []
    for k in range(chain.shape[1]):
        a, b = float(chain[:, k].min()), float(chain[:, k].max())
        if lo is not None and np.isfinite(lo[k]) and np.isfinite(hi[k]):
            a, b = float(lo[k]), float(hi[k])
        out.append((a - 0.5, b + 0.5) if a == b else (a, b))
    return out


def _calibration_outputs(run: Run, result, prior, d: Path):
    run.add(io.write_chain_csv(d / "chain.csv", result.samples))
    run.add(io.write_study_csv(d / "summary.csv", [result]))
    run.add(io.write_diagnostics_csv(d / "diagnostics.csv", [result]))
    chain = result.samples.chain
    svg = plots.pair_density(chain, result.param_names, bins=50, ranges=_ranges(prior, chain),
                             title=f"Posterior densities, output {result.label}")
    run.add(plots.write_svg(d / "pairplot.svg", svg))


def _sweep_outputs(run: Run, results, report, d: Path):
    ok = [r for r in results if r.ok]
    run.add(io.write_study_csv(d / "sweep.csv", results))
    run.add(io.write_diagnostics_csv(d / "diagnostics.csv", results))
    if report is not None:
        sc = report.score
        if sc is not None:
            rows = [[p, float(sc.rho[k]), int(sc.undefined[k])] for k, p in enumerate(sc.param_names)]
            run.add(io.write_csv(d / "correlation.csv", ["parameter", "spearman", "undefined"], rows))
        rows = [[f.param, f.subset, float(f.mean_shift), float(f.std_ratio), f.classification]
                for f in report.flags.flags]
        run.add(io.write_csv(d / "flags.csv", ["parameter", "subset", "mean_shift", "std_ratio", "classification"], rows))
        rows = [[p, report.best_subset[p], report.worst_subset[p]] for p in report.reference.param_names]
        run.add(io.write_csv(d / "extremes.csv", ["parameter", "best_subset", "worst_subset"], rows))
    _sweep_plots(run, [r.label for r in ok], ok[0].param_names if ok else (),
                 np.array([r.mean for r in ok]), np.array([r.std for r in ok]), d)


def _sweep_plots(run: Run, labels, names, means, stds, d: Path):
    if not labels:
        return
    run.add(plots.write_svg(d / "sweep_means.svg",
                            plots.bar_chart(labels, names, means, title="Posterior mean values", ylabel="mean")))
    run.add(plots.write_svg(d / "sweep_stds.svg",
                            plots.bar_chart(labels, names, stds, title="Posterior STDs", ylabel="STD")))


def _check_failures(run: Run, results, strict: bool):
    failed = [r for r in results if not r.ok]
    unconverged = [r.label for r in results if r.ok and not r.converged]
    if unconverged:
        run.notes.append(f"non-converged subsets (split-Rhat above threshold): {unconverged}")
    for r in failed:
        msg = f"subset {r.label} failed: {r.error}"
        run.notes.append(msg)
        print(f"warning [{run.stage}]: {msg}", file=sys.stderr)
    if failed and len(failed) == len(results):
        raise ExitError(3, run.stage, "every subset calibration failed")
    return bool(failed) and strict


# ---------------------------------------------------------------- commands


def cmd_sa(cfg: dict, run: Run, jobs: int):
    run.begin("model")
    sim, _ = build_model(cfg)
    dists = build_prior(cfg, sim).marginal_dists() if cfg.get("prior") else sim.calib_dists
    run.end()
    run.begin("sobol")
    sa = cfg["sa"]
    seed = cfg["seed"] if sa["seed"] is None else sa["seed"]
    table = estimate_sobol(sim, dists, n=int(sa["n"]), seed=int(seed), with_second_order=bool(sa["second_order"]),
                           x=sa["x"], input_names=sim.param_names, response_labels=sim.response_labels,
                           n_bootstrap=int(sa["n_bootstrap"]))
    run.end()
    run.begin("write")
    _sobol_outputs(run, table, cfg)
    run.end()
    return 0


def _setup_calibration(cfg, run):
    run.begin("data")
    sim, truth = build_model(cfg)
    prior = build_prior(cfg, sim)
    records = build_dataset(cfg, sim, truth)
    run.add(io.save_dataset(run.outdir / "dataset.json", records, {"model": sim.name}))
    run.end()
    run.begin("context")
    ctx = build_context(cfg, records, sim, prior)
    run.end()
    return sim, prior, ctx


def cmd_calibrate(cfg: dict, run: Run, jobs: int):
    sim, prior, ctx = _setup_calibration(cfg, run)
    run.begin("mcmc")
    subset = _subset_from(cfg, sim)
    res = run_subset_study(ctx, prior, [subset], cfg["mcmc"], base_seed=int(cfg["seed"]), n_jobs=1)[0]
    if not res.ok:
        raise ExitError(3, "mcmc", res.error)
    if not res.converged:
        run.notes.append(f"split-Rhat above threshold: {np.round(res.split_rhat, 4).tolist()}")
    run.end()
    run.begin("write")
    _calibration_outputs(run, res, prior, run.outdir)
    run.end()
    return 0


def _prior_sobol(cfg, sim, prior):
    sa = cfg["sa"]
    seed = cfg["seed"] if sa["seed"] is None else sa["seed"]
    return estimate_sobol(sim, prior.marginal_dists(), n=int(sa["n"]), seed=int(seed), x=sa["x"],
                          input_names=sim.param_names, response_labels=sim.response_labels,
                          n_bootstrap=int(sa["n_bootstrap"]))


def cmd_sweep(cfg: dict, run: Run, jobs: int, strict: bool = False):
    sim, prior, ctx = _setup_calibration(cfg, run)
    run.begin("sobol")
    table = _prior_sobol(cfg, sim, prior)
    run.end()
    run.begin("sweep")
    subsets = _subsets_from(cfg, sim)
    results = run_subset_study(ctx, prior, subsets, cfg["mcmc"], base_seed=int(cfg["seed"]), n_jobs=jobs,
                               keep_chains=False)
    partial = _check_failures(run, results, strict)
    run.end()
    run.begin("report")
    idc = cfg["ident"]
    ref = idc["reference"] or subset_label(tuple(range(sim.response_dim)), sim.response_dim)
    report = None
    try:
        report = build_report(results, table, ref, idc["mean_shift_threshold"], idc["std_ratio"])
    except InvuqError as exc:
        run.notes.append(f"report incomplete: {exc}")
    _sweep_outputs(run, results, report, run.outdir)
    _sobol_outputs(run, table, cfg)
    run.end()
    return 4 if partial else 0


def cmd_iterate(cfg: dict, run: Run, jobs: int, strict: bool = False):
    sim, prior, ctx = _setup_calibration(cfg, run)
    idc = cfg["ident"]
    run.begin("sobol")
    table0 = _prior_sobol(cfg, sim, prior)
    _sobol_outputs(run, table0, cfg, prefix="prior_")
    run.end()
    run.begin("iterate")
    if idc["iterate_subsets"] == "all":
        subsets = _subsets_from(cfg, sim)
    elif idc["iterate_subsets"] == "full":
        subsets = [tuple(range(sim.response_dim))]
    else:
        raise ConfigError("ident.iterate_subsets must be 'full' or 'all'")
    sa = cfg["sa"]
    sobol_cfg = {"n": int(sa["n"]), "seed": int(cfg["seed"] if sa["seed"] is None else sa["seed"]), "x": sa["x"]}
    iters = iterate_inverse_uq(ctx, prior, int(idc["n_iter"]), cfg["mcmc"], base_seed=int(cfg["seed"]),
                               subsets=subsets, sobol_config=sobol_cfg, tol=float(idc["tol"]),
                               marginals_only=bool(idc["marginals_only"]), n_jobs=jobs)
    run.end()
    run.begin("write")
    partial = False
    for it in iters:
        d = run.outdir / f"iter_{it.iteration}"
        d.mkdir(parents=True, exist_ok=True)
        if len(it.results) > 1:
            partial |= _check_failures(run, it.results, strict)
            rep = build_report(it.results, it.sobol, it.reference.label, idc["mean_shift_threshold"],
                               idc["std_ratio"], iteration=it.iteration)
            _sweep_outputs(run, it.results, rep, d)
        _calibration_outputs(run, it.reference, it.prior, d)
        _sobol_outputs(run, it.sobol, cfg, directory=d)
    names = sim.param_names
    rows = []
    for it in iters:
        ratio = it.std_ratio if it.std_ratio is not None else np.full(len(names), np.nan)
        rows.append([it.iteration, *it.reference.std.astype(float), *np.asarray(ratio, dtype=float)])
    run.add(io.write_csv(run.outdir / "convergence.csv",
                         ["iteration", *[f"std:{p}" for p in names], *[f"ratio:{p}" for p in names]], rows))
    if len(iters) < int(idc["n_iter"]):
        run.notes.append(f"early stop after iteration {len(iters)}: every STD changed by less than {idc['tol']:g}")
    run.end()
    return 4 if partial else 0


def cmd_gen_data(cfg: dict, run: Run, jobs: int):
    run.begin("generate")
    sim, truth = build_model(cfg)
    if truth is None:
        raise ConfigError("gen-data requires model.name = benchmark")
    seed = cfg["data"].get("seed")
    records = generate_dataset(truth, seed=None if seed is None else int(seed), n_points=int(cfg["data"]["n_points"]))
    meta = {"model": "benchmark", "benchmark": truth.config, "theta_true": truth.theta_true.tolist()}
    run.add(io.save_dataset(run.outdir / "dataset.json", records, meta))
    rows = [[*r.x.astype(float), *r.observed.astype(float), *r.noise_std.astype(float)] for r in records]
    header = [*sim.design_names, *sim.response_labels, *[f"noise_std:{lbl}" for lbl in sim.response_labels]]
    run.add(io.write_csv(run.outdir / "dataset.csv", header, rows))
    run.end()
    return 0


def cmd_report(cfg: dict, run: Run, jobs: int):
    """Re-render figures from CSVs already present in the output directory."""
    run.begin("render")
    d = run.outdir
    found = False
    for path in sorted(d.rglob("*.csv")):
        run.add(path)
    for path in sorted(d.rglob("*.json")):
        if path.name != "manifest.json":
            run.add(path)
    for sob in sorted(d.rglob("*sobol.csv")):
        found = True
        prefix = sob.name[: -len("sobol.csv")]
        _sobol_plots(run, io.read_sobol_csv(sob), sob.parent, prefix)
    for sw in sorted(d.rglob("sweep.csv")):
        found = True
        names, labels, means, stds = io.read_study_csv(sw)
        _sweep_plots(run, labels, names, means, stds, sw.parent)
    for ch in sorted(d.rglob("chain.csv")):
        found = True
        names, chain = io.read_chain_csv(ch)
        run.add(plots.write_svg(ch.parent / "pairplot.svg", plots.pair_density(chain, names, bins=50,
                                                                              title="Posterior densities")))
    if not found:
        raise ConfigError(f"no result CSVs found under {d}")
    run.end()
    return 0


COMMANDS = {"sa": cmd_sa, "calibrate": cmd_calibrate, "sweep": cmd_sweep, "iterate": cmd_iterate,
            "gen-data": cmd_gen_data, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invuq", allow_abbrev=False, description="Inverse UQ with GP discrepancy and Sobol' analysis")
    p.add_argument("--version", action="version", version=f"invuq {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, allow_abbrev=False)
        s.add_argument("--config", help="YAML or JSON config file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (dotted key)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--model", help="builtin model name or 'benchmark'")
        s.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
        s.add_argument("--strict", action="store_true", help="exit 4 when any subset fails")
        s.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        if name in ("sa", "sweep", "iterate"):
            s.add_argument("--n", type=int, help="base sample size N of the Sobol' design")
        if name in ("calibrate", "sweep", "iterate"):
            s.add_argument("--n-steps", dest="n_steps", type=int)
            s.add_argument("--data", help="dataset JSON path")
        if name == "calibrate":
            s.add_argument("--subset", help="response subset label, e.g. 134")
        if name == "iterate":
            s.add_argument("--n-iter", dest="n_iter", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = "config"
    try:
        cfg = resolve_config(args)
        if args.print_config:
            sys.stdout.write(yaml.safe_dump(cfg, sort_keys=True))
            return 0
        jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
        if jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        run = Run(args.command, cfg, output_dir(cfg, args.command))
        fn = COMMANDS[args.command]
        try:
            if args.command in ("sweep", "iterate"):
                code = fn(cfg, run, jobs, strict=args.strict)
            else:
                code = fn(cfg, run, jobs)
        finally:
            stage = run.stage
        run.manifest(exit_code=code)
        return code
    except ExitError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 2
    except InvuqError as exc:
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error [{stage}]: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
