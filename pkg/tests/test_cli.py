import json

import numpy as np
import pytest
import yaml

from invuq import cli, io

CONJ = "data.records=[{observed: [2.0], noise_std: [1.0]}]"
TOY2 = "data.records=[{observed: [1.0, -0.5], noise_std: [0.5, 0.5]}]"


def run(tmp_path, name, *argv):
    out = tmp_path / name
    return cli.main([*argv, "--out", str(out), "--jobs", "1"]), out


def test_print_config(capsys):
    assert cli.main(["sweep", "--print-config", "--seed", "9", "--set", "mcmc.n_steps=1234"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["seed"] == 9 and cfg["mcmc"]["n_steps"] == 1234
    assert cfg["pipeline"]["validation_fraction"] == 0.5


def test_config_file_and_overrides(tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text("model: {name: ishigami}\nsa: {n: 512}\nseed: 3\n")
    assert cli.main(["sa", "--config", str(path), "--seed", "4", "--print-config"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["model"]["name"] == "ishigami" and cfg["sa"]["n"] == 512 and cfg["seed"] == 4


@pytest.mark.parametrize("argv", [
    ["sa", "--set", "sa.bogus=1"],
    ["sa", "--set", "benchmark={seed: 1}"],
    ["sa", "--config", "/nonexistent.yaml"],
    ["calibrate", "--model", "conjugate_gaussian"],
    ["sa", "--model", "nosuchmodel"],
    ["calibrate", "--subset", "7"],
])
def test_config_errors_exit_2(tmp_path, argv, capsys):
    code, _ = run(tmp_path, "o", *argv)
    assert code == 2
    assert "error [" in capsys.readouterr().err


def test_missing_benchmark_key_is_named(tmp_path, capsys):
    code, _ = run(tmp_path, "o", "gen-data", "--set", "benchmark={seed: 1, noise_scale: 0.1}")
    assert code == 2
    assert "discrepancy_amplitude" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, capsys):
    code, _ = run(tmp_path, "o", "calibrate", "--model", "conjugate_gaussian",
                  "--set", "data.records=[{observed: [2.0], noise_std: [0.0]}]")
    assert code == 3
    assert "error [context]" in capsys.readouterr().err


def test_strict_partial_failure_exit_4(tmp_path, monkeypatch):
    real = cli.run_subset_study

    def flaky(ctx, prior, subsets, *a, **kw):
        res = real(ctx, prior, subsets, *a, **kw)
        from dataclasses import replace
        return [replace(res[0], error="CalibrationError: injected")] + res[1:]

    monkeypatch.setattr(cli, "run_subset_study", flaky)
    args = ["sweep", "--model", "conjugate_gaussian", "--set", "model.params={dim: 2}", "--set", TOY2,
            "--n-steps", "2000", "--n", "64"]
    code, out = run(tmp_path, "lenient", *args)
    assert code == 0
    assert "injected" in json.dumps(io.read_json(out / "manifest.json")["notes"])
    code, _ = run(tmp_path, "strict", *args, "--strict")
    assert code == 4


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "root"))
    assert cli.main(["sa", "--model", "linear_additive", "--n", "64", "--jobs", "1"]) == 0
    assert (tmp_path / "root" / "sa" / "sobol.csv").exists()


def test_sa_outputs(tmp_path):
    code, out = run(tmp_path, "sa", "sa", "--model", "ishigami", "--n", "4096", "--set", "sa.second_order=true")
    assert code == 0
    table = io.read_sobol_csv(out / "sobol.csv")
    assert table.main[:, 0] == pytest.approx([0.314, 0.442, 0.0], abs=0.05)
    for name in ("sobol_ci.csv", "interactions.csv", "interaction_summary.csv", "sobol_second_order.csv",
                 "sobol_main.svg", "sobol_total.svg", "manifest.json"):
        assert (out / name).exists(), name
    assert io.verify_manifest(out / "manifest.json") == []


def test_calibrate_conjugate(tmp_path):
    code, out = run(tmp_path, "cal", "calibrate", "--model", "conjugate_gaussian", "--set", CONJ,
                    "--n-steps", "20000")
    assert code == 0
    names, labels, means, stds = io.read_study_csv(out / "summary.csv")
    assert means[0, 0] == pytest.approx(1.0, abs=0.1)
    assert stds[0, 0] == pytest.approx(np.sqrt(0.5), rel=0.1)
    header, chain = io.read_chain_csv(out / "chain.csv")
    assert chain.shape == (10_000, 1)
    assert (out / "pairplot.svg").exists()


def test_sweep_two_response_toy(tmp_path):
    code, out = run(tmp_path, "sw", "sweep", "--model", "conjugate_gaussian", "--set", "model.params={dim: 2}",
                    "--set", TOY2, "--n-steps", "3000", "--n", "64")
    assert code == 0
    names, labels, means, stds = io.read_study_csv(out / "sweep.csv")
    assert labels == ["1", "2", "12"]
    for name in ("flags.csv", "correlation.csv", "extremes.csv", "sweep_stds.svg", "sobol.csv"):
        assert (out / name).exists(), name


def test_iterate_base_case_matches_calibrate(tmp_path):
    common = ["--model", "conjugate_gaussian", "--set", CONJ, "--n-steps", "4000", "--seed", "7"]
    code, cal = run(tmp_path, "cal", "calibrate", *common)
    assert code == 0
    code, it = run(tmp_path, "it", "iterate", *common, "--n-iter", "1", "--n", "64")
    assert code == 0
    assert io.sha256(cal / "chain.csv") == io.sha256(it / "iter_1" / "chain.csv")
    assert io.sha256(cal / "summary.csv") == io.sha256(it / "iter_1" / "summary.csv")
    assert (it / "iter_1" / "sobol.csv").exists() and (it / "prior_sobol.csv").exists()


def test_iterate_early_stop(tmp_path):
    code, out = run(tmp_path, "it", "iterate", "--model", "conjugate_gaussian", "--set", CONJ,
                    "--n-steps", "4000", "--n", "64", "--n-iter", "4", "--set", "ident.tol=0.9")
    assert code == 0
    assert sorted(p.name for p in out.glob("iter_*")) == ["iter_1", "iter_2"]
    assert any("early stop" in n for n in io.read_json(out / "manifest.json")["notes"])
    header, rows = io.read_csv(out / "convergence.csv")
    assert len(rows) == 2 and header[0] == "iteration"


def test_gen_data_then_calibrate(tmp_path):
    code, gen = run(tmp_path, "gen", "gen-data", "--set", "data.n_points=12")
    assert code == 0
    assert len(io.load_dataset(gen / "dataset.json")) == 12
    header, rows = io.read_csv(gen / "dataset.csv")
    assert len(rows) == 12 and header[:4] == ["pressure", "inlet_mass_flow", "power", "inlet_temperature"]
    code, out = run(tmp_path, "cal", "calibrate", "--data", str(gen / "dataset.json"), "--n-steps", "2000")
    assert code == 0
    names, _, means, _ = io.read_study_csv(out / "summary.csv")
    assert names == ("P1008", "P1012", "P1022", "P1028", "P1029")
    code, _ = run(tmp_path, "g2", "gen-data", "--model", "ishigami")
    assert code == 2


def test_report_needs_results(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 2
