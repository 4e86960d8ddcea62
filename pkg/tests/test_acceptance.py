"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports its measured values.
"""
import math
import time

import numpy as np
import pytest

from conftest import record
from tables import PARAMS, RESPONSES, TABLE3_MAIN, TABLE3_TOTAL, TABLE4
from invuq import cli, io
from invuq.calib import (
    IndependentPrior,
    log_posterior,
    make_context,
    prepare_context,
    run_mcmc,
)
from invuq.distributions import Gaussian, Uniform
from invuq.emulator import GPHyperparameters, TrainedGP, fit_mle, log_marginal_likelihood, predict
from invuq.ident import (
    flag_fake_identifiability,
    iterate_inverse_uq,
    result_from_table,
    run_subset_study,
    sensitivity_identifiability_score,
)
from invuq.model import ExperimentRecord, Simulator, builtin_model, generate_dataset, make_benchmark
from invuq.sa import brute_force_sobol, detect_interactions, estimate_sobol, table_from_values


def _ishigami_closed_form(a=7.0, b=0.1):
    # written out independently of the package's own reference helper
    pi4 = math.pi**4
    v1 = 0.5 * (1 + b * pi4 / 5) ** 2
    v2 = a**2 / 8
    v13 = b**2 * pi4**2 * 8 / 225
    v = v1 + v2 + v13
    return np.array([v1, v2, 0.0]) / v, np.array([v1 + v13, v2, v13]) / v


# ---------------------------------------------------------------- 1


def test_criterion_1_sobol_accuracy():
    t0 = time.perf_counter()
    lin = builtin_model("linear_additive", {"c": (1.0, 2.0)})
    tl = estimate_sobol(lin, lin.calib_dists, n=2**14, seed=0)
    ish = builtin_model("ishigami")
    ti = estimate_sobol(ish, ish.calib_dists, n=2**16, seed=0)
    elapsed = time.perf_counter() - t0

    s_ref, t_ref = _ishigami_closed_form()
    assert np.allclose(s_ref, [0.3139, 0.4424, 0.0], atol=1e-4) and abs(t_ref[2] - 0.244) < 1e-3
    e_lin = max(np.abs(tl.main[:, 0] - [0.2, 0.8]).max(), np.abs(tl.total[:, 0] - tl.main[:, 0]).max())
    e_ish = max(np.abs(ti.main[:, 0] - s_ref).max(), abs(ti.total[2, 0] - t_ref[2]))
    ok = e_lin <= 0.02 and e_ish <= 0.02 and elapsed < 30
    record("1", ok, f"linear err {e_lin:.4f}, ishigami err {e_ish:.4f} (tol 0.02), {elapsed:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------- 2


def _product(theta):
    return theta[:, 0] * theta[:, 1] + theta[:, 2]


ANALYTIC = [
    ("linear_additive", lambda: builtin_model("linear_additive", {"c": (1.0, 2.0)}), None),
    ("ishigami", lambda: builtin_model("ishigami"), None),
    ("product", lambda: _product, (Uniform(0, 1), Uniform(0, 1), Uniform(0, 1))),
]


def test_criterion_2_variance_identity_and_oracle():
    worst_identity, worst_gap = 0.0, 0.0
    for _, make, dists in ANALYTIC:
        model = make()
        dists = dists or model.calib_dists
        bf = brute_force_sobol(model, dists, n_outer=512, n_inner=512, seed=3)
        lhs = bf.extras["var_of_conditional_mean"] + bf.extras["mean_of_conditional_var"]
        worst_identity = max(worst_identity, float(np.max(np.abs(lhs / bf.variance - 1.0))))
        est = estimate_sobol(model, dists, n=2**14, seed=0)
        gap = max(np.abs(est.main - bf.main).max(), np.abs(est.total - bf.total).max())
        worst_gap = max(worst_gap, float(gap))
    ok = worst_identity <= 0.03 and worst_gap <= 0.03
    record("2", ok, f"identity rel err {worst_identity:.4f} (tol 0.03), oracle gap {worst_gap:.4f} (tol 0.03)")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_table3_interactions():
    t0 = time.perf_counter()
    table = table_from_values(TABLE3_MAIN, TABLE3_TOTAL, PARAMS, RESPONSES)
    rep = detect_interactions(table, gap_threshold=0.05)
    elapsed = time.perf_counter() - t0
    expected = {(p, r) for p in ("P1008", "P1012") for r in ("VoidF1", "VoidF2")}
    flagged = rep.flagged_pairs()
    ok = flagged == expected and elapsed < 1.0
    record("3", ok, f"flagged {sorted(flagged)}, {elapsed * 1e3:.1f} ms")
    assert ok


# ---------------------------------------------------------------- 4


def _dense_oracle(x, y, beta, s2, omega, q):
    # conditional Gaussian via plain linear solves, no factorisation reuse
    def k(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2 * omega).sum(-1)
        return s2 * np.exp(-d2)

    kxx = k(x, x)
    kqx = k(q, x)
    mean = beta + kqx @ np.linalg.solve(kxx, y - beta)
    cov = k(q, q) - kqx @ np.linalg.solve(kxx, kqx.T)
    return mean, cov


def test_criterion_4_gp_correctness():
    rng = np.random.default_rng(2024)
    interp_err, oracle_err = 0.0, 0.0
    for _ in range(20):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(3, 8))
        # redraw near-singular designs, where no two float64 solvers agree to 1e-10
        while True:
            x = rng.uniform(0, 1, (n, d))
            omega = rng.uniform(3.0, 30.0, d)
            corr = np.exp(-((x[:, None, :] - x[None, :, :]) ** 2 * omega).sum(-1))
            if np.linalg.cond(corr) < 1e8:
                break
        y = rng.normal(size=n) * rng.uniform(0.5, 5)
        s2 = float(rng.uniform(0.5, 3.0))
        beta = float(rng.normal())
        gp = TrainedGP(x, y, GPHyperparameters([beta], s2, omega, 2.0), np.zeros(n))
        m, c = predict(gp, x)
        scale = max(1.0, float(np.abs(y).max()))
        interp_err = max(interp_err, float(np.abs(m - y).max()) / scale, float(np.diag(c).max()) / s2)
        q = rng.uniform(-0.5, 1.5, (4, d))
        m, c = predict(gp, q)
        mo, co = _dense_oracle(x, y, beta, s2, omega, q)
        oracle_err = max(oracle_err, float(np.abs(m - mo).max()), float(np.abs(c - co).max()))

    dominated = True
    for seed in range(5):
        x = rng.uniform(0, 1, (15, 2))
        y = np.sin(4 * x[:, 0]) + x[:, 1] ** 2 + 0.01 * rng.normal(size=15)
        gp = fit_mle(x, y, nugget=1e-4, seed=seed)
        best = log_marginal_likelihood(gp.hyper, x, y, gp.nugget, profile_beta=True)
        for h in gp.fit_info["starts"]:
            try:
                start = log_marginal_likelihood(GPHyperparameters([0.0], h["sigma2"], h["omega"], h["p"]), x, y,
                                                gp.nugget, profile_beta=True)
            except Exception:
                continue
            dominated &= best >= start - 1e-9 * abs(start)
    ok = interp_err <= 1e-8 and oracle_err <= 1e-10 and dominated
    record("4", ok, f"interpolation {interp_err:.2e} (tol 1e-8), oracle {oracle_err:.2e} (tol 1e-10), "
                    f"MLE dominance {'holds' if dominated else 'violated'}")
    assert ok


# ---------------------------------------------------------------- 5


def _line_model():
    def f(x, th):
        return (th[:, 0] + th[:, 1] * x[:, 0])[:, None]

    return Simulator("line", 1, 2, 1, [[0.0, 1.0]], f)


def _grid_total_variation(n_steps=100_000, seed=0):
    sim = _line_model()
    xs = np.array([0.0, 0.5, 1.0])
    obs = np.array([0.3, 0.9, 1.2])
    recs = [ExperimentRecord([x], [y], [0.4], sim.response_labels) for x, y in zip(xs, obs)]
    ctx = make_context(recs, sim)
    prior = IndependentPrior((Uniform(-2.0, 3.0), Uniform(-2.0, 4.0)))
    s = run_mcmc(lambda th: log_posterior(th, ctx, prior), prior, {"n_steps": n_steps, "seed": seed})
    tv = []
    lo, hi = prior.bounds
    g0 = np.linspace(lo[0], hi[0], 401)
    g1 = np.linspace(lo[1], hi[1], 401)
    a, b = np.meshgrid(0.5 * (g0[1:] + g0[:-1]), 0.5 * (g1[1:] + g1[:-1]), indexing="ij")
    resid = obs[None, None, :] - (a[..., None] + b[..., None] * xs)
    logp = -0.5 * (resid**2).sum(-1) / 0.16
    w = np.exp(logp - logp.max())
    w /= w.sum()
    for k, marg in enumerate((w.sum(1), w.sum(0))):
        edges = (g0, g1)[k][::10]
        grid_mass = marg.reshape(-1, 10).sum(1)
        counts, _ = np.histogram(s.chain[:, k], bins=edges)
        tv.append(0.5 * np.abs(counts / counts.sum() - grid_mass).sum())
    return max(tv)


def test_criterion_5_mcmc_correctness():
    sim = builtin_model("conjugate_gaussian")
    recs = [ExperimentRecord(np.empty(0), [2.0], [1.0], sim.response_labels)]
    ctx = make_context(recs, sim)
    prior = IndependentPrior((Gaussian(0.0, 1.0),))
    worst_z, worst_var, slowest = 0.0, 0.0, 0.0
    for seed in range(10):
        t0 = time.perf_counter()
        s = run_mcmc(lambda th: log_posterior(th, ctx, prior), prior, {"seed": seed})
        slowest = max(slowest, time.perf_counter() - t0)
        c = s.chain[:, 0]
        mcse = c.std(ddof=1) / math.sqrt(s.ess[0])
        worst_z = max(worst_z, abs(c.mean() - 1.0) / mcse)
        worst_var = max(worst_var, abs(c.var(ddof=1) / 0.5 - 1.0))
    tv = _grid_total_variation()
    ok = worst_z <= 3 and worst_var <= 0.10 and tv <= 0.05 and slowest < 60
    record("5", ok, f"max |mean-1|/MCSE {worst_z:.2f} (tol 3), max var rel err {worst_var:.3f} (tol 0.10), "
                    f"grid TV {tv:.3f} (tol 0.05), slowest seed {slowest:.1f} s")
    assert ok


# ---------------------------------------------------------------- 6


@pytest.fixture(scope="module")
def five_seed_sweeps():
    truth = make_benchmark()
    sim = truth.simulator
    prior = IndependentPrior(sim.calib_dists)
    sobol = estimate_sobol(sim, sim.calib_dists, n=2**14, seed=0, input_names=sim.param_names,
                           response_labels=sim.response_labels)
    runs, times, failed = [], [], []
    for s in range(5):
        t0 = time.perf_counter()
        data = generate_dataset(truth, seed=int(truth.config["seed"]) + s)
        ctx = prepare_context(data, sim, prior)
        res = run_subset_study(ctx, prior, base_seed=100 * s, keep_chains=False)
        times.append(time.perf_counter() - t0)
        # failed subsets are reported, not averaged in as NaN
        runs.append([r for r in res if r.ok])
        failed += [f"seed {s} subset {r.label}: {r.error}" for r in res if not r.ok]
    return sobol, runs, times, failed


@pytest.mark.slow
def test_criterion_6a_response4_only_parameter(five_seed_sweeps):
    sobol, runs, times, failed = five_seed_sweeps
    sig = sobol.total > 0.1
    only = [k for k in range(sig.shape[0]) if sig[k].sum() == 1]
    assert only, "benchmark lacks a single-response parameter"
    k = only[0]
    j = int(np.flatnonzero(sig[k])[0])
    margins = []
    for res in runs:
        with_j = [r.std[k] for r in res if j in r.subset]
        without = [r.std[k] for r in res if j not in r.subset]
        margins.append(min(without) - max(with_j))
    ok = all(m > 0 for m in margins) and max(times) < 1800 and not failed
    record("6a", ok, f"{PARAMS[k]} via {RESPONSES[j]}: min STD gap (without - with) per seed "
                     f"{np.round(margins, 3).tolist()}, slowest sweep {max(times):.0f} s, "
                     f"failed subsets {failed or 'none'}")
    assert ok


@pytest.mark.slow
def test_criterion_6b_sensitive_subsets_tighter(five_seed_sweeps):
    sobol, runs, _, _ = five_seed_sweeps
    sig = sobol.total > 0.1
    gaps = []
    for k in range(len(PARAMS)):
        inc, exc = [], []
        for res in runs:
            inc.append(np.mean([r.std[k] for r in res if sig[k, list(r.subset)].any()]))
            exc.append(np.mean([r.std[k] for r in res if not sig[k, list(r.subset)].any()]))
        gaps.append(float(np.mean(exc) - np.mean(inc)))
    ok = all(g > 0 for g in gaps)
    record("6b", ok, "mean STD (excluded - included) per parameter " + str(np.round(gaps, 3).tolist()))
    assert ok


@pytest.mark.slow
def test_criterion_6c_rank_score(five_seed_sweeps):
    sobol, runs, _, _ = five_seed_sweeps
    rho = np.array([sensitivity_identifiability_score(sobol, res).rho for res in runs])
    sig = sobol.total > 0.1
    # a distinguishing response exists when some subsets include a sensitive
    # response and others do not
    distinguishing = [k for k in range(len(PARAMS)) if sig[k].any() and not sig[k].all()]
    mean_rho = np.nanmean(rho, axis=0)
    ok = all(mean_rho[k] > 0.5 for k in distinguishing)
    record("6c", ok, f"seed-averaged rho {np.round(mean_rho, 3).tolist()} (> 0.5); per-seed min "
                     f"{np.round(np.nanmin(rho, axis=0), 3).tolist()}")
    assert ok


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_7_iteration_contraction(benchmark_context):
    ctx, prior = benchmark_context
    sim = ctx.simulator
    it = iterate_inverse_uq(ctx, prior, 2, base_seed=0)
    prior_table = estimate_sobol(sim, sim.calib_dists, n=2**14, seed=0, input_names=sim.param_names,
                                 response_labels=sim.response_labels)
    ratio = it[1].reference.std / it[0].reference.std
    shift = max(np.abs(it[0].sobol.main - prior_table.main).max(), np.abs(it[0].sobol.total - prior_table.total).max())
    ok = len(it) == 2 and np.all(ratio <= 1.1) and shift > 0.05
    record("7", ok, f"STD ratios {np.round(ratio, 3).tolist()} (<= 1.1), max Sobol' change {shift:.3f} (> 0.05)")
    assert ok


# ---------------------------------------------------------------- 8


@pytest.mark.slow
def test_criterion_8_fake_identifiability(benchmark_context):
    ctx, prior = benchmark_context
    sim = ctx.simulator
    k = PARAMS.index("P1029")
    full = run_subset_study(ctx, prior, [(0, 1, 2, 3)], base_seed=0)[0]
    marg = list(sim.calib_dists)
    marg[k] = Gaussian(3.0, 0.1)
    biased = run_subset_study(ctx, IndependentPrior(tuple(marg)), [(0, 1, 2)], base_seed=0)[0]
    flags = flag_fake_identifiability([biased], full)
    hit = flags.lookup("P1029", "123")
    demo_ok = (abs(biased.mean[k] - 3.0) <= 0.3 and biased.std[k] < 0.15 and hit is not None
               and hit.classification == "fake")

    study = [result_from_table(lbl, PARAMS, m, s) for lbl, (m, s) in TABLE4.items()]
    rep = flag_fake_identifiability(study, next(r for r in study if r.label == "1234"))
    f234 = rep.lookup("P1008", "234")
    f123 = rep.lookup("P1029", "123")
    fixture_ok = (f234 is not None and f234.classification == "poor" and f234.mean_shift > 2
                  and f123 is not None and f123.classification == "poor"
                  and abs(f123.mean_shift - 1.68) < 0.01 and abs(f123.std_ratio - 2.49) < 0.01)
    ok = demo_ok and fixture_ok
    record("8", ok, f"biased P1029 mean {biased.mean[k]:.3f} STD {biased.std[k]:.3f} flag "
                    f"{hit.classification if hit else None}; fixture 234/P1008 "
                    f"{f234.classification if f234 else None} (shift {f234.mean_shift:.2f}), "
                    f"123/P1029 {f123.classification if f123 else None} (shift {f123.mean_shift:.2f})")
    assert ok


# ---------------------------------------------------------------- 9


COMMANDS = [
    ["sa", "--model", "ishigami", "--n", "1024"],
    ["sa", "--n", "256"],
    ["calibrate", "--model", "conjugate_gaussian", "--n-steps", "4000", "--set", "data.records=[{x: [], observed: [2.0], noise_std: [1.0], labels: [y1]}]"],
    ["calibrate", "--n-steps", "3000", "--subset", "134"],
    ["sweep", "--n-steps", "2000", "--n", "256"],
    ["iterate", "--n-steps", "2000", "--n", "256", "--n-iter", "2"],
    ["gen-data"],
]


def _csv_digests(outdir):
    return {p.relative_to(outdir).as_posix(): io.sha256(p) for p in sorted(outdir.rglob("*.csv"))}


@pytest.mark.slow
def test_criterion_9_reproducibility(tmp_path):
    problems = []
    for k, argv in enumerate(COMMANDS):
        digests = []
        for rep in range(2):
            out = tmp_path / f"c{k}_{rep}"
            code = cli.main([*argv, "--out", str(out), "--jobs", "1"])
            if code != 0:
                problems.append(f"{argv[0]} exit {code}")
                break
            bad = io.verify_manifest(out / "manifest.json")
            problems += [f"{argv[0]}: {b}" for b in bad]
            digests.append(_csv_digests(out))
        if len(digests) == 2 and (digests[0] != digests[1] or not digests[0]):
            problems.append(f"{argv[0]} CSVs differ between reruns")
    # report re-renders from stored CSVs
    src = tmp_path / "c4_0"
    before = {p.name: p.read_bytes() for p in src.glob("*.svg")}
    code = cli.main(["report", "--out", str(src)])
    after = {p.name: p.read_bytes() for p in src.glob("*.svg")}
    if code != 0 or before != after or io.verify_manifest(src / "manifest.json"):
        problems.append("report re-render mismatch")
    ok = not problems
    record("9", ok, f"{len(COMMANDS)} commands rerun twice plus report; problems: {problems or 'none'}")
    assert ok
