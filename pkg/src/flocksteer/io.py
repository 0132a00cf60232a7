"""Deterministic CSV and JSON writers.

CSV: header row, comma separated, LF line endings, floats in shortest
round-trip form. JSON: UTF-8, sorted keys, non-finite floats as strings.
"""

import csv
import json
import math

import numpy as np


def trajectory_header(n, d):
    cols = ["t"]
    cols += [f"x_{i}_{k}" for i in range(n) for k in range(d)]
    cols += [f"v_{i}_{k}" for i in range(n) for k in range(d)]
    cols += ["d_X", "d_V", "d_beta", "lambda_global", "min_alpha", "energy"]
    return cols


COMPARISON_HEADER = ["eps", "t_skip", "vel_err", "pos_err", "vel_ratio", "pos_ratio", "method", "dt", "steps"]


def _cell(value):
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return "" if value is None else value


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(c) for c in row])


def trajectory_rows(traj):
    n_s, n, d = traj.x.shape
    for k in range(n_s):
        rec = traj.records[k] if traj.records else None
        yield [traj.t[k], *traj.x[k].ravel(), *traj.v[k].ravel(), *(rec.values() if rec else [None] * 6)]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_plain(payload), fh, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
        fh.write("\n")
