"""CSV output for experiment reports."""

from __future__ import annotations

import csv
from pathlib import Path

SCALING_FIELDS = ["R", "var_exact", "var_mc", "stderr"]
DISTANCE_FIELDS = ["R", "n_samples", "KS", "KS_se", "dTV", "stein_bound", "case"]
SWEEP_FIELDS = ["family", "cell", "cell2", "ratio"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows, fields) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in fields})
    return path


def write_long_csv(path, rows) -> Path:
    """Tidy (id, variable, value) layout for external plotting."""
    long = []
    for i, row in enumerate(rows):
        for k, v in row.items():
            long.append({"id": i, "variable": k, "value": v})
    return write_csv(path, long, ["id", "variable", "value"])
