"""Report emission: JSON result file, CSV tables and the BCGRID1 binary grid format.

BCGRID1 layout (all little endian):

    8 bytes   magic  b"BCGRID1\\n"
    uint32    length L of the JSON header
    L bytes   header {"dtype", "shape", "axes": [lengths], "attrs": {...}}
    float64   axis values, concatenated in axis order
    data      C-order array of the declared dtype
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IoFailure

MAGIC = b"BCGRID1\n"
_DTYPES = {"float64": "<f8", "complex128": "<c16", "float32": "<f4", "int64": "<i8"}

DECAY_HEADER = ("sigma0", "N", "mu", "sup_value")
SURFACE_HEADER = ("band", "col", "ybar", "s", "sfrak", "residual")
LADDER_HEADER = ("band", "J", "measured", "predicted", "rel_diff", "factor")


@dataclass
class Grid:
    axes: list
    data: np.ndarray
    attrs: dict = field(default_factory=dict)


def write_grid(path, data, axes, attrs=None):
    data = np.asarray(data)
    name = data.dtype.name
    if name not in _DTYPES:
        raise IoFailure(f"unsupported dtype {name}", path=str(path))
    axes = [np.asarray(a, "<f8") for a in axes]
    if tuple(len(a) for a in axes) != data.shape[:len(axes)]:
        raise IoFailure("axis lengths do not match the leading data shape", path=str(path))
    header = json.dumps({"dtype": name, "shape": list(data.shape),
                         "axes": [len(a) for a in axes], "attrs": attrs or {}},
                        sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for a in axes:
                fh.write(a.tobytes())
            fh.write(np.ascontiguousarray(data, _DTYPES[name]).tobytes())
    except OSError as exc:
        raise IoFailure(str(exc), path=str(path)) from exc


def read_grid(path) -> Grid:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc), path=str(path)) from exc
    if raw[:8] != MAGIC:
        raise IoFailure("not a BCGRID1 file", path=str(path))
    (L,) = struct.unpack("<I", raw[8:12])
    head = json.loads(raw[12:12 + L])
    off = 12 + L
    axes = []
    for m in head["axes"]:
        axes.append(np.frombuffer(raw, "<f8", m, off).copy())
        off += 8 * m
    dt = np.dtype(_DTYPES[head["dtype"]])
    count = int(np.prod(head["shape"]))
    if len(raw) - off != count * dt.itemsize:
        raise IoFailure("truncated BCGRID1 payload", path=str(path))
    data = np.frombuffer(raw, dt, count, off).reshape(head["shape"]).copy()
    return Grid(axes, data, head["attrs"])


# ----------------------------------------------------------------------------
# JSON

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def dumps_result(result_dict):
    return json.dumps(_clean(result_dict), indent=1, sort_keys=True)


# ----------------------------------------------------------------------------
# CSV

def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in r])
    except OSError as exc:
        raise IoFailure(str(exc), path=str(path)) from exc


def emit_reports(result, out_dir=None, formats=("json", "csv")):
    """Write the result file and CSV tables; ``"grid"`` adds BCGRID1 field dumps.

    Files: result.json, decay.csv (u) and decay_a.csv (a), surfaces_<n>.csv,
    ladders.csv, <field>_<n>.bcgrid. Returns the list of written paths.
    """
    out_dir = out_dir or result.config.out
    if not out_dir:
        raise IoFailure("no output directory configured")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoFailure(str(exc), path=str(out_dir)) from exc
    written = []
    if "json" in formats:
        p = os.path.join(out_dir, "result.json")
        try:
            with open(p, "w") as fh:
                fh.write(dumps_result(result.to_dict()))
                fh.write("\n")
        except OSError as exc:
            raise IoFailure(str(exc), path=p) from exc
        written.append(p)
    if "csv" in formats:
        if result.decay is not None:
            table = result.decay.table()
            for qty, name in (("u", "decay.csv"), ("a", "decay_a.csv")):
                p = os.path.join(out_dir, name)
                _write_csv(p, DECAY_HEADER, [r[:4] for r in table if r[5] == qty])
                written.append(p)
        for n, surf in sorted(result.surfaces.items()):
            p = os.path.join(out_dir, f"surfaces_{n}.csv")
            _write_csv(p, SURFACE_HEADER, surface_rows(n, surf, result.col_axes))
            written.append(p)
        rows = [(n, r["J"], r["measured"], r["predicted"], r["rel_diff"],
                 "" if r["factor"] is None else r["factor"])
                for n, rec in sorted(result.bands.items()) for r in rec.get("ladder", [])]
        if rows:
            p = os.path.join(out_dir, "ladders.csv")
            _write_csv(p, LADDER_HEADER, rows)
            written.append(p)
    if "grid" in formats:
        for n, fields in sorted(result.fields.items()):
            for name, (axes, arr) in sorted(fields.items()):
                p = os.path.join(out_dir, f"{name}_{n}.bcgrid")
                write_grid(p, arr, axes, {"band": n, "field": name})
                written.append(p)
    return written


def surface_rows(n, surf, col_axes):
    """One row per column of the surface grid (first ybar axis and s reported)."""
    shape = surf.sfrak.shape
    grids = np.meshgrid(*col_axes, indexing="ij")
    rows = []
    for flat in range(int(np.prod(shape))):
        idx = np.unravel_index(flat, shape)
        rows.append((n, flat, float(grids[0][idx]), float(grids[-1][idx]),
                     float(surf.sfrak[idx]), float(surf.residual[idx])))
    return rows
