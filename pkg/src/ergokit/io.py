"""File formats.

Binary grid file (little endian)::

    magic   8 bytes  b"ERGGRID1"
    P       uint64
    l       uint64
    nx      uint64   0 for a deterministic function, else |X|
    weights nx float64
    values  P**l * max(nx, 1) float64, row-major over (v_1, ..., v_l[, x])

CSV grid file: header ``v1,...,vl[,x],value``; randomized files start with
a ``# weights: w0 w1 ...`` comment line. Factors are stored as ``.npy``
labels next to a ``.json`` provenance file.
"""

from __future__ import annotations

import csv
import io as _io
import itertools
import json
import struct
from pathlib import Path

import numpy as np

from .errors import PreconditionError, ShapeMismatchError
from .factors import Factor
from .grid import AnyGrid, FiniteProbabilitySpace, GridFunction, RandomizedGridFunction, check_entries

MAGIC = b"ERGGRID1"
_HEADER = struct.Struct("<8sQQQ")


def save_grid(f: AnyGrid, path) -> None:
    nx = f.space.size if f.space is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, f.P, f.l, nx))
        if nx:
            fh.write(np.asarray(f.space.weights, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_grid(path) -> AnyGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise PreconditionError(f"{path}: truncated header")
    magic, P, l, nx = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise PreconditionError(f"{path}: not a grid file")
    count = P**l * max(nx, 1)
    check_entries(count, "grid file")
    expected = _HEADER.size + 8 * (nx + count)
    if len(data) != expected:
        raise ShapeMismatchError(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _HEADER.size
    if nx:
        weights = np.frombuffer(data, dtype="<f8", count=nx, offset=off)
        off += 8 * nx
        vals = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        return RandomizedGridFunction(vals, FiniteProbabilitySpace(weights), int(P), int(l))
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=off)
    return GridFunction(vals, int(P), int(l))


def grid_to_csv(f: AnyGrid) -> str:
    buf = _io.StringIO()
    if f.space is not None:
        buf.write("# weights: " + " ".join(repr(float(w)) for w in f.space.weights) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    cols = [f"v{i}" for i in range(1, f.l + 1)] + (["x"] if f.space is not None else []) + ["value"]
    writer.writerow(cols)
    shape = f.values.shape
    for idx, val in zip(itertools.product(*(range(n) for n in shape)), f.values.ravel()):
        writer.writerow(list(idx) + [repr(float(val))])
    return buf.getvalue()


def save_grid_csv(f: AnyGrid, path) -> None:
    Path(path).write_text(grid_to_csv(f))


def load_grid_csv(path, P: int | None = None) -> AnyGrid:
    lines = Path(path).read_text().splitlines()
    weights = None
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)
        if head.startswith("# weights:"):
            weights = [float(x) for x in head[len("# weights:"):].split()]
    reader = csv.reader(lines)
    cols = next(reader)
    if not cols or cols[-1] != "value":
        raise PreconditionError(f"{path}: last column must be 'value'")
    has_x = "x" in cols
    l = len(cols) - 1 - int(has_x)
    rows = [r for r in reader if r]
    idx = np.array([[int(c) for c in r[:-1]] for r in rows], dtype=np.int64).reshape(len(rows), -1)
    vals = np.array([float(r[-1]) for r in rows])
    if P is None:
        P = int(idx[:, :l].max()) + 1 if l and len(rows) else 1
    nx = len(weights) if weights is not None else 1
    shape = (P,) * l + ((nx,) if has_x else ())
    out = np.full(shape, np.nan)
    out[tuple(idx.T)] = vals
    if np.isnan(out).any():
        raise ShapeMismatchError(f"{path}: missing grid points")
    if has_x:
        if weights is None:
            raise PreconditionError(f"{path}: randomized CSV without a weights line")
        return RandomizedGridFunction(out, FiniteProbabilitySpace(weights), P, l)
    return GridFunction(out, P, l)


def save_factor(Y: Factor, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    npy, meta = stem.with_suffix(".npy"), stem.with_suffix(".json")
    np.save(npy, np.asarray(Y.labels, dtype="<i8"))
    meta.write_text(Y.to_json() + "\n")
    return npy, meta


def load_factor(stem) -> Factor:
    stem = Path(stem)
    labels = np.load(stem.with_suffix(".npy"))
    info = json.loads(stem.with_suffix(".json").read_text())
    if list(labels.shape) != info["shape"]:
        raise ShapeMismatchError("label array does not match the recorded shape")
    return Factor(labels, info["atom_count"], info["provenance"])
