import json

import numpy as np
import pytest

from invuq import io, plots
from invuq.errors import ConfigError
from invuq.ident import result_from_table
from invuq.model import generate_dataset
from invuq.sa import table_from_values

from tables import PARAMS, RESPONSES, TABLE3_MAIN, TABLE3_TOTAL, TABLE4


def test_fmt_roundtrip():
    for v in (1.0 / 3.0, 1e-300, -2.5e17, np.nextafter(1.0, 2.0)):
        assert float(io.fmt(v)) == v
    assert io.fmt(float("nan")) == "nan"


def test_dataset_roundtrip(tmp_path, benchmark):
    recs = generate_dataset(benchmark, n_points=7)
    path = io.save_dataset(tmp_path / "d.json", recs, {"note": "x"})
    back = io.load_dataset(path)
    assert all(np.array_equal(a.observed, b.observed) and np.array_equal(a.x, b.x) for a, b in zip(recs, back))
    with pytest.raises(ConfigError):
        io.load_dataset(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text(json.dumps({"records": [{"x": [1.0]}]}))
    with pytest.raises(ConfigError):
        io.load_dataset(tmp_path / "bad.json")


def test_sobol_csv_layout(tmp_path):
    table = table_from_values(TABLE3_MAIN, TABLE3_TOTAL, PARAMS, RESPONSES)
    path = io.write_sobol_csv(tmp_path / "sobol.csv", table)
    header, rows = io.read_csv(path)
    assert header == ["Output"] + [f"main:{r}" for r in RESPONSES] + [f"total:{r}" for r in RESPONSES]
    assert [r[0] for r in rows] == [*PARAMS, "Sum"]
    assert float(rows[-1][1]) == pytest.approx(0.7806)
    back = io.read_sobol_csv(path)
    assert np.array_equal(back.main, table.main) and np.array_equal(back.total, table.total)


def test_study_csv_roundtrip(tmp_path):
    study = [result_from_table(lbl, PARAMS, m, s) for lbl, (m, s) in TABLE4.items()]
    path = io.write_study_csv(tmp_path / "sweep.csv", study)
    names, labels, means, stds = io.read_study_csv(path)
    assert names == PARAMS and labels[-1] == "1234" and means.shape == (15, 5)
    assert stds[-1, 4] == 0.3453


def test_manifest_detects_tampering(tmp_path):
    a = io.write_csv(tmp_path / "a.csv", ["x"], [[1.0]])
    b = io.write_json(tmp_path / "sub" / "b.json", {"v": np.float64(2.0)})
    m = io.write_manifest(tmp_path, [a, b], command="test")
    assert io.verify_manifest(m) == []
    doc = io.read_json(m)
    assert [f["path"] for f in doc["files"]] == ["a.csv", "sub/b.json"]
    a.write_text("x\n2\n")
    b.unlink()
    problems = io.verify_manifest(m)
    assert any("digest" in p for p in problems) and any("missing" in p for p in problems)


def test_bar_chart_is_deterministic():
    v = np.array(TABLE3_MAIN)
    a = plots.bar_chart(PARAMS, RESPONSES, v, title="main")
    assert a == plots.bar_chart(PARAMS, RESPONSES, v, title="main")
    assert a.startswith("<svg") and a.count("<rect") >= v.size
    neg = plots.bar_chart(["a"], ["s"], [[-0.2]])
    assert "<svg" in neg


def test_pair_density():
    chain = np.random.default_rng(0).normal(size=(3000, 3))
    svg = plots.pair_density(chain, ["a", "b", "c"], bins=20, ranges=[(-4, 4)] * 3)
    assert svg == plots.pair_density(chain, ["a", "b", "c"], bins=20, ranges=[(-4, 4)] * 3)
    assert ">a<" in svg and svg.endswith("</svg>\n")
    const = plots.pair_density(np.ones((100, 2)), ["x", "y"], bins=5)
    assert "<svg" in const
