"""File formats: JSON documents, 17-digit CSV tables and run manifests.

JSON floats are written with ``repr`` (shortest round-trip form), CSV floats
with 17 significant digits; both reload bit-exactly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .emulator import TrainedGP
from .errors import ConfigError
from .model import ExperimentRecord
from .sa import SobolTable

FMT = "%.17g"


def fmt(v) -> str:
    v = float(v)
    if np.isnan(v):
        return "nan"
    return FMT % v


def _plain(obj):
    """Recursively convert numpy containers and scalars to JSON types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------- datasets and GPs


def dataset_to_dict(records: Sequence[ExperimentRecord], meta: dict | None = None) -> dict:
    return {"kind": "dataset", "meta": dict(meta or {}), "records": [r.to_dict() for r in records]}


def dataset_from_dict(d: dict) -> list[ExperimentRecord]:
    try:
        return [ExperimentRecord.from_dict(r) for r in d["records"]]
    except KeyError as exc:
        raise ConfigError(f"dataset file missing key {exc.args[0]!r}") from None


def save_dataset(path, records, meta=None) -> Path:
    return write_json(path, dataset_to_dict(records, meta))


def load_dataset(path) -> list[ExperimentRecord]:
    if not Path(path).exists():
        raise ConfigError(f"dataset file {path} does not exist")
    return dataset_from_dict(read_json(path))


def save_gp(path, gp: TrainedGP) -> Path:
    return write_json(path, {"kind": "trained_gp", **gp.to_dict()})


def load_gp(path) -> TrainedGP:
    return TrainedGP.from_dict(read_json(path))


# ---------------------------------------------------------------- CSV


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path} is empty")
    return rows[0], rows[1:]


def write_sobol_csv(path, table: SobolTable) -> Path:
    """Inputs as rows; main effects per response, then total effects; a Sum row."""
    labels = table.response_labels
    header = ["Output"] + [f"main:{r}" for r in labels] + [f"total:{r}" for r in labels]
    rows = [[name, *table.main[i].astype(float), *table.total[i].astype(float)]
            for i, name in enumerate(table.input_names)]
    rows.append(["Sum", *table.main_sum.astype(float), *table.total_sum.astype(float)])
    return write_csv(path, header, rows)


def read_sobol_csv(path) -> SobolTable:
    header, rows = read_csv(path)
    m = (len(header) - 1) // 2
    labels = tuple(h.split(":", 1)[1] for h in header[1 : 1 + m])
    body = [r for r in rows if r[0] != "Sum"]
    vals = np.array([[float(v) for v in r[1:]] for r in body])
    return SobolTable(vals[:, :m], vals[:, m:], tuple(r[0] for r in body), labels, estimator_n=0, method="csv")


def write_sobol_ci_csv(path, table: SobolTable) -> Path:
    labels = table.response_labels
    header = ["Output"] + [f"ci_main:{r}" for r in labels] + [f"ci_total:{r}" for r in labels]
    rows = [[name, *table.ci_main[i].astype(float), *table.ci_total[i].astype(float)]
            for i, name in enumerate(table.input_names)]
    return write_csv(path, header, rows)


def write_study_csv(path, results) -> Path:
    """One row per subset: posterior means then STDs per parameter."""
    names = results[0].param_names
    header = ["Output"] + [f"mean:{p}" for p in names] + [f"std:{p}" for p in names]
    rows = [[r.label, *r.mean.astype(float), *r.std.astype(float)] for r in results]
    return write_csv(path, header, rows)


def read_study_csv(path) -> tuple[tuple[str, ...], list[str], np.ndarray, np.ndarray]:
    header, rows = read_csv(path)
    d = (len(header) - 1) // 2
    names = tuple(h.split(":", 1)[1] for h in header[1 : 1 + d])
    vals = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), 2 * d)
    return names, [r[0] for r in rows], vals[:, :d], vals[:, d:]


def write_diagnostics_csv(path, results) -> Path:
    header = ["Output", "seed", "acceptance_rate", "max_split_rhat", "min_ess", "converged", "error"]
    rows = []
    for r in results:
        rhat = float(np.nanmax(r.split_rhat)) if r.split_rhat is not None else float("nan")
        ess = float(np.nanmin(r.ess)) if r.ess is not None and np.any(np.isfinite(r.ess)) else float("nan")
        rows.append([r.label, r.seed, float(r.acceptance_rate), rhat, ess, int(r.converged), r.error or ""])
    return write_csv(path, header, rows)


def write_chain_csv(path, samples) -> Path:
    header = list(samples.param_names) + ["log_post"]
    data = np.column_stack([samples.chain, samples.log_post])
    return write_csv(path, header, data.astype(float).tolist())


def read_chain_csv(path) -> tuple[list[str], np.ndarray]:
    header, rows = read_csv(path)
    data = np.array([[float(v) for v in r] for r in rows])
    return header[:-1], data[:, :-1]


# ---------------------------------------------------------------- manifests


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(outdir, files: Sequence, **fields) -> Path:
    """``manifest.json`` listing every output file with its digest."""
    outdir = Path(outdir)
    inventory = []
    for f in sorted({Path(f).resolve() for f in files}):
        rel = os.path.relpath(f, outdir.resolve())
        inventory.append({"path": rel, "sha256": sha256(f), "bytes": f.stat().st_size})
    return write_json(outdir / "manifest.json", {**fields, "files": inventory})


def verify_manifest(path) -> list[str]:
    """Problems found (missing files or digest mismatches); empty if clean."""
    path = Path(path)
    doc = read_json(path)
    problems = []
    for entry in doc.get("files", []):
        f = path.parent / entry["path"]
        if not f.exists():
            problems.append(f"missing: {entry['path']}")
        elif sha256(f) != entry["sha256"]:
            problems.append(f"digest mismatch: {entry['path']}")
    return problems
