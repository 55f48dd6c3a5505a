"""Deterministic CSV/JSON writers, digests and schedule/trajectory formats.

Floats are written with ``repr`` (shortest round-trip form), so a reader
recovers every value bit for bit.
"""
import csv
import hashlib
import json
import os

import numpy as np

from .controls import ControlSchedule

__all__ = [
    "fmt",
    "write_csv",
    "read_csv",
    "write_json",
    "file_digest",
    "write_schedule",
    "read_schedule",
    "write_trajectory",
    "read_trajectory",
    "write_iteration_log",
    "ensure_dir",
]


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path):
    """``(header, float array)``; an empty body gives a ``(0, n_cols)`` array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: missing header row") from None
        rows = [[float(x) for x in r] for r in reader if r]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(_plain(obj), fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_schedule(path, schedule):
    write_csv(path, ["t", "b", "k"], zip(schedule.grid, schedule.b_values, schedule.k_values))


def read_schedule(path):
    header, data = read_csv(path)
    if header != ["t", "b", "k"]:
        raise ValueError(f"{path}: expected header t,b,k")
    return ControlSchedule(data[:, 0], data[:, 1], data[:, 2])


def write_trajectory(path, grid, s, i, extra=None):
    """Columns ``t, s, i, r`` plus optional named columns from ``extra``."""
    grid, s, i = (np.asarray(a, dtype=float) for a in (grid, s, i))
    cols = [grid, s, i, 1.0 - s - i]
    header = ["t", "s", "i", "r"]
    for name, values in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(values))
    write_csv(path, header, zip(*cols))


def read_trajectory(path):
    header, data = read_csv(path)
    if header[:3] != ["t", "s", "i"]:
        raise ValueError(f"{path}: expected leading columns t,s,i")
    return {name: data[:, j] for j, name in enumerate(header)}


def write_iteration_log(path, costs, rhos):
    rows = [(0, costs[0], 0.0)] + [(p + 1, c, r) for p, (c, r) in enumerate(zip(costs[1:], rhos))]
    write_csv(path, ["iter", "j_delta", "rho"], rows)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
