"""Energy records and the run's CSV files.

Floats are serialized with repr (shortest round-trip form), so reruns
with identical seeds produce byte-identical files.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnergyRecord:
    params: tuple
    energy: float
    stderr: float | None  # None for surrogate records
    source: str  # "vmc" | "surrogate"

    def __post_init__(self):
        if self.source not in ("vmc", "surrogate"):
            raise ValueError(f"unknown record source {self.source!r}")
        if not np.isfinite(self.energy):
            raise ValueError("non-finite energy record")


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def atomic_write(path, text: str):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records_csv(path, param_names, records):
    rows = ["param_" + ",param_".join(param_names) + ",energy,stderr,source"
            if param_names else "energy,stderr,source"]
    for rec in records:
        cells = [_fmt(p) for p in rec.params]
        cells += [_fmt(rec.energy), _fmt(rec.stderr), rec.source]
        rows.append(",".join(cells))
    atomic_write(path, "\n".join(rows) + "\n")


def read_records_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = [c[len("param_"):] for c in reader.fieldnames or [] if c.startswith("param_")]
        records = []
        for row in reader:
            params = tuple(float(row[f"param_{n}"]) for n in names)
            stderr = float(row["stderr"]) if row["stderr"] else None
            records.append(EnergyRecord(params, float(row["energy"]), stderr, row["source"]))
    return names, records


class TrainingLogWriter:
    """Streams the per-iteration training log with a fixed column set."""

    def __init__(self, path, n_geometries: int):
        self.path = path
        self.n = n_geometries
        cols = ["t"]
        cols += [f"E_{c}" for c in range(self.n)]
        cols += [f"sigma_{c}" for c in range(self.n)]
        cols += ["acceptance", "lr", "cg_residual", "surr_loss", "gamma"]
        os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._fh.write(",".join(cols) + "\n")

    def write(self, row: dict):
        cells = [str(int(row["t"]))]
        cells += [_fmt(v) for v in np.asarray(row["E"]).tolist()]
        cells += [_fmt(v) for v in np.asarray(row["sigma"]).tolist()]
        cells += [_fmt(row["acceptance"]), _fmt(row["lr"]), _fmt(row["cg_residual"])]
        cells += [_fmt(row["surr_loss"]), _fmt(row["gamma"])]
        self._fh.write(",".join(cells) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class DiagnosticsWriter:
    def __init__(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
        self._fh = open(path, "w", newline="")
        self._fh.write("t,dead_neuron_fraction\n")

    def write(self, t: int, fraction: float):
        self._fh.write(f"{int(t)},{_fmt(fraction)}\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
