"""File formats: grid CSV with a JSON header line, report CSVs and JSON documents.

Grid files start with one line of compact JSON (bounds, resolution, N),
followed by a CSV header row and one row per node in row-major order:
coordinates first, then values. Floats are written with 17 significant
digits so a round trip is lossless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import GridDomain, GridMap, build_domain

__all__ = ["fmt", "to_jsonable", "write_json", "write_csv", "write_gridmap", "read_gridmap",
           "write_field"]


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if isinstance(x, (list, tuple, np.ndarray)):
        return " ".join(fmt(v) for v in np.ravel(x))
    return "" if x is None else str(x)


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, obj) -> None:
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _coord_names(n: int) -> list[str]:
    return ["x", "y", "z"][:n]


def _grid_header(domain: GridDomain, N: int) -> str:
    head = {"bounds": [list(b) for b in domain.bounds], "resolution": list(domain.resolution), "N": N}
    return json.dumps(head, sort_keys=True, separators=(",", ":"))


def write_gridmap(path, u: GridMap) -> None:
    pts = u.domain.flat_points()
    vals = u.flat_values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_grid_header(u.domain, u.N) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_coord_names(u.n) + [f"u{a}" for a in range(u.N)])
        for x, v in zip(pts, vals):
            w.writerow([fmt(c) for c in x] + [fmt(c) for c in v])


def write_field(path, domain: GridDomain, columns: dict) -> None:
    """Grid CSV with arbitrary per-node columns (e.g. residual and validity)."""
    pts = domain.flat_points()
    cols = {k: np.asarray(v).reshape(domain.node_count, -1) for k, v in columns.items()}
    names = []
    for k, v in cols.items():
        names += [k] if v.shape[1] == 1 else [f"{k}{j}" for j in range(v.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_grid_header(domain, sum(v.shape[1] for v in cols.values())) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_coord_names(domain.n) + names)
        for i, x in enumerate(pts):
            row = [fmt(c) for c in x]
            for v in cols.values():
                row += [fmt(c) for c in v[i]]
            w.writerow(row)


def read_gridmap(path) -> GridMap:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"grid file {str(path)!r} not found")
    with open(path, encoding="utf-8") as fh:
        try:
            head = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: first line is not a JSON header") from exc
        rows = list(csv.reader(fh))
    domain = build_domain(head["bounds"], head["resolution"])
    N, n = int(head["N"]), domain.n
    body = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if body.shape != (domain.node_count, n + N):
        raise ConfigError(f"{path}: expected {domain.node_count} rows of {n + N} columns")
    return GridMap(domain, body[:, n:].reshape(domain.shape + (N,)))
