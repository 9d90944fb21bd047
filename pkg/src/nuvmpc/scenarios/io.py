"""Trace CSV and run-summary JSON writers.

CSV schema: a header row ``k, u_<name>..., y_<name>..., x_<name>...`` and one
row per step ``k = 0..K-1``; floats use 17 significant digits so a run
round-trips bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np


def fmt(v) -> str:
    return format(float(v), ".17g")


def _columns(arr, K):
    a = np.asarray(arr, float)
    return a.reshape(K, -1)


def trace_csv(outcome) -> str:
    K = outcome.u.shape[0]
    u = _columns(outcome.u, K)
    y = _columns(outcome.y, K)
    x = _columns(outcome.x, K)
    header = (["k"] + [f"u_{n}" for n in outcome.u_names] + [f"y_{n}" for n in outcome.y_names]
              + [f"x_{n}" for n in outcome.x_names])
    if len(header) != 1 + u.shape[1] + y.shape[1] + x.shape[1]:
        raise ValueError("column names do not match the signal widths")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    data = np.hstack([u, y, x])
    for k in range(K):
        w.writerow([str(k)] + [fmt(v) for v in data[k]])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    return v


def summary_dict(outcome, manifest: dict, config: dict) -> dict:
    return _jsonable({
        "manifest": manifest,
        "scenario": outcome.kind,
        "config": config,
        "iterations": outcome.iterations,
        "outer_iterations": outcome.result.outer_iterations,
        "converged": outcome.converged,
        "metrics": outcome.metrics,
        "wall_time_s": outcome.wall_time,
    })


def summary_json(outcome, manifest: dict, config: dict) -> str:
    return json.dumps(summary_dict(outcome, manifest, config), indent=2, sort_keys=True) + "\n"
