"""Deterministic on-disk formats: grid-function CSV, operator COO, JSON records.

Floats are written with repr (shortest round-trip), so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .torusgrid import GridFunction, SparseOperator, TorusGrid

__all__ = [
    "gridfunction_to_csv",
    "gridfunction_from_csv",
    "operator_to_coo",
    "write_json",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def gridfunction_to_csv(gf: GridFunction, path: str, value_name: str = "value") -> None:
    """Nodes in lexicographic index order; columns x0..x_{d-1}, value."""
    grid = gf.grid
    pts = grid.points()
    header = ",".join([f"x{j}" for j in range(grid.dim)] + [value_name])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, val in zip(pts, gf.values):
            fh.write(",".join(_fmt(c) for c in row) + "," + _fmt(val) + "\n")


def gridfunction_from_csv(path: str) -> GridFunction:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dim = data.shape[1] - 1
    n = round(data.shape[0] ** (1.0 / dim))
    if n**dim != data.shape[0]:
        raise ValueError(f"{path}: row count {data.shape[0]} is not a d-cube")
    return GridFunction(TorusGrid(dim, n), data[:, -1])


def operator_to_coo(op: SparseOperator, path: str) -> None:
    """Coordinate-format dump: header line with shape, then 'i j value' rows."""
    coo = op.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz} scheme={op.scheme}\n")
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i} {j} {_fmt(v)}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):   # before int: bool is an int
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def write_json(obj: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
