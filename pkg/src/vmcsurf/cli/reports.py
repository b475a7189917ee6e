"""Run summaries: absolute and mean-centered error metrics, trace files."""

from __future__ import annotations

import csv
import os

import numpy as np

from .records import atomic_write, read_records_csv


def relative_mae(reference, candidate) -> float:
    """Mean absolute deviation after removing each list's own mean.

    mean_i |(E'_i - mean E') - (E_i - mean E)| -- invariant to a constant
    offset between the two energy lists.
    """
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError("energy lists must be equal-length 1-D with at least one entry")
    return float(np.mean(np.abs((b - b.mean()) - (a - a.mean()))))


def absolute_mae(reference, candidate) -> float:
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(candidate, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("energy lists must have equal length")
    return float(np.mean(np.abs(a - b)))


def _match_records(vmc_records, surr_records):
    surr_by_params = {rec.params: rec for rec in surr_records}
    pairs = []
    for rec in vmc_records:
        other = surr_by_params.get(rec.params)
        if other is not None:
            pairs.append((rec, other))
    return pairs


def generate_report(run_dir: str) -> dict:
    """Summarize a completed run directory into report/ CSV files.

    Requires at least one of records_vmc.csv / records_surrogate.csv; the
    comparison columns are marked unavailable when either side is absent.
    """
    vmc_path = os.path.join(run_dir, "records_vmc.csv")
    surr_path = os.path.join(run_dir, "records_surrogate.csv")
    log_path = os.path.join(run_dir, "training_log.csv")
    report_dir = os.path.join(run_dir, "report")
    os.makedirs(report_dir, exist_ok=True)

    have_vmc = os.path.exists(vmc_path)
    have_surr = os.path.exists(surr_path)
    if not have_vmc and not have_surr:
        raise FileNotFoundError(f"{run_dir}: no evaluation records found")

    summary = {"abs_mae": "", "rel_mae": "", "n_matched": "0"}
    lines = ["metric,value"]
    per_geo_rows = []
    names = []
    if have_vmc and have_surr:
        names, vmc = read_records_csv(vmc_path)
        _, surr = read_records_csv(surr_path)
        pairs = _match_records(vmc, surr)
        if pairs:
            e_vmc = [p[0].energy for p in pairs]
            e_sur = [p[1].energy for p in pairs]
            summary["abs_mae"] = repr(absolute_mae(e_vmc, e_sur))
            summary["rel_mae"] = repr(relative_mae(e_vmc, e_sur))
            summary["n_matched"] = str(len(pairs))
            for rec_v, rec_s in pairs:
                per_geo_rows.append(
                    [repr(p) for p in rec_v.params]
                    + [repr(rec_v.energy), repr(rec_v.stderr or 0.0), repr(rec_s.energy),
                       repr(rec_s.energy - rec_v.energy)]
                )
    for key, value in summary.items():
        lines.append(f"{key},{value}")
    atomic_write(os.path.join(report_dir, "summary.csv"), "\n".join(lines) + "\n")

    if per_geo_rows:
        header = ",".join(
            [f"param_{n}" for n in names] + ["E_vmc", "stderr_vmc", "E_surrogate", "delta"]
        )
        body = "\n".join(",".join(r) for r in per_geo_rows)
        atomic_write(os.path.join(report_dir, "per_geometry.csv"), header + "\n" + body + "\n")

    n_log_rows = 0
    if os.path.exists(log_path):
        with open(log_path, newline="") as fh:
            reader = csv.DictReader(fh)
            sigma_cols = [c for c in reader.fieldnames or [] if c.startswith("sigma_")]
            trace = ["t," + ",".join(sigma_cols)]
            for row in reader:
                trace.append(row["t"] + "," + ",".join(row[c] for c in sigma_cols))
                n_log_rows += 1
        atomic_write(os.path.join(report_dir, "sigma_trace.csv"), "\n".join(trace) + "\n")

    diag_path = os.path.join(run_dir, "diagnostics.csv")
    if os.path.exists(diag_path):
        with open(diag_path) as fh:
            atomic_write(os.path.join(report_dir, "dead_neuron_trace.csv"), fh.read())

    return {
        "abs_mae": float(summary["abs_mae"]) if summary["abs_mae"] else None,
        "rel_mae": float(summary["rel_mae"]) if summary["rel_mae"] else None,
        "n_matched": int(summary["n_matched"]),
        "n_log_rows": n_log_rows,
        "report_dir": report_dir,
    }
