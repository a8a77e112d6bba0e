"""Atomic CSV/JSON writers and Table-3-style aggregation of attack records."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

RECORD_SCHEMA = 1
SUMMARY_METRICS = ("iou", "mse", "linf", "l2", "iterations", "queries")
SUMMARY_COLUMNS = ("method", "n") + tuple(
    f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std")
)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temporary file in the same directory, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write(path, json_text(obj))


def csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns) -> None:
    atomic_write(path, csv_text(rows, columns))


def summarize_records(records) -> list[dict]:
    """Mean and std of each metric per method, methods in sorted order.

    Metrics a record lacks (white-box records have no query count) are left
    out of that method's statistics and reported empty if no record has them.
    """
    by_method: dict[str, list[dict]] = {}
    for rec in records:
        by_method.setdefault(rec["method"], []).append(rec)
    out = []
    for method in sorted(by_method):
        recs = by_method[method]
        row = {"method": method, "n": len(recs)}
        for m in SUMMARY_METRICS:
            vals = np.array([r[m] for r in recs if r.get(m) is not None], dtype=np.float64)
            row[f"{m}_mean"] = float(vals.mean()) if vals.size else None
            row[f"{m}_std"] = float(vals.std()) if vals.size else None
        out.append(row)
    return out
