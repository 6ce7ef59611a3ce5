"""CSV and binary export.

Binary dump layout (little endian)::

    b"VSM1"                 4-byte magic
    int64 ndim
    int64 dims[ndim]
    float64 data[prod(dims)]   row-major
"""

from __future__ import annotations

import contextlib
import csv
import os
import tempfile

import numpy as np

from .errors import DataError

MAGIC = b"VSM1"


@contextlib.contextmanager
def atomic_open(path, mode="w", **kw):
    """Write to a temporary file next to ``path`` and rename on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **kw) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _format_column(c):
    if c.dtype.kind in "iub":
        return [str(int(v)) for v in c]
    if c.dtype.kind == "f":
        # repr round-trips float64 exactly
        return [repr(v) for v in c.tolist()]
    return [str(v) for v in c]


def write_columns(path, header, columns):
    """Columns of equal length to a CSV with a header row."""
    cols = [np.asarray(c).ravel() for c in columns]
    if len({c.size for c in cols}) > 1:
        raise DataError("columns must have equal length")
    text = [_format_column(c) for c in cols]
    with atomic_open(path, newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*text):
            fh.write(",".join(row) + "\n")


def read_columns(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    return {h: np.array([float(row[i]) for row in rows]) for i, h in enumerate(header)}


def write_ensemble_csv(path, times, states):
    """Long format ``replication,t,particle,value``.

    ``states`` is ``(N, n_times)`` for one replication or ``(R, N, n_times)``.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    r, n, k = states.shape
    rep = np.repeat(np.arange(r), k * n)
    t = np.tile(np.repeat(np.asarray(times, dtype=float), n), r)
    part = np.tile(np.arange(n), r * k)
    vals = states.transpose(0, 2, 1).ravel()
    write_columns(path, ["replication", "t", "particle", "value"], [rep, t, part, vals])


def write_binary(path, array):
    a = np.ascontiguousarray(array, dtype="<f8")
    with atomic_open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array([a.ndim, *a.shape], dtype="<i8").tobytes())
        fh.write(a.tobytes(order="C"))


def read_binary(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"{path}: not a VSM1 dump")
        ndim = int(np.frombuffer(fh.read(8), dtype="<i8")[0])
        dims = tuple(int(d) for d in np.frombuffer(fh.read(8 * ndim), dtype="<i8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(dims)):
        raise DataError(f"{path}: payload has {data.size} values, header says {dims}")
    return data.reshape(dims)


def write_measure_csv(path, measure):
    write_columns(path, ["atom", "weight"], [measure.atoms, measure.weights])


def write_density_csv(path, density):
    write_columns(path, ["x", "density"], [density.grid.nodes, density.values])


def write_density_snapshots(path, densities):
    """Long format ``t,x,value`` for a sequence of grid densities."""
    t = np.concatenate([np.full(d.grid.n_nodes, d.time) for d in densities])
    x = np.concatenate([d.grid.nodes for d in densities])
    v = np.concatenate([d.values for d in densities])
    write_columns(path, ["t", "x", "value"], [t, x, v])


def write_path_csv(path, times, values, name):
    write_columns(path, ["t", name], [times, values])
