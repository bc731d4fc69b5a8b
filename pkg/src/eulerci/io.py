"""PFLD field files, JSON reports and CSV slices.

A PFLD file is a 32-byte header followed by little-endian float64 data in
(t, comp, x1, x2, x3) order. Header: magic b"PFLD", uint32 version,
uint32 rank (component count), uint32 n, uint32 nt, float64 t0, uint32 pad.
A whole tuple is one file whose components are v, p, R, kappa, phi in that
order (3 + 1 + 6 + 1 + 3); the time step, level, E and E' live in a JSON
sidecar with the same stem.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .fields import TimeSeries

MAGIC = b"PFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIdI")
assert _HEADER.size == 32


class FieldIOError(OSError):
    pass


def write_pfld(path, ts: TimeSeries) -> None:
    data = np.ascontiguousarray(ts.data, dtype="<f8")
    nt, c, n = data.shape[0], data.shape[1], data.shape[-1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, c, n, nt, ts.t0, 0))
        fh.write(data.tobytes())


def read_pfld(path, dt: float, raw: bool = False) -> TimeSeries:
    """raw=True keeps any component count (rank "raw")."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise FieldIOError(f"cannot read {path}: {e}") from e
    if len(buf) < _HEADER.size:
        raise FieldIOError(f"{path}: truncated header")
    magic, ver, c, n, nt, t0, _ = _HEADER.unpack_from(buf)
    if magic != MAGIC or ver != VERSION:
        raise FieldIOError(f"{path}: not a PFLD v{VERSION} file")
    want = nt * c * n ** 3 * 8
    if len(buf) - _HEADER.size != want:
        raise FieldIOError(f"{path}: expected {want} data bytes, found {len(buf) - _HEADER.size}")
    data = np.frombuffer(buf, "<f8", offset=_HEADER.size).reshape(nt, c, n, n, n).astype(float)
    return TimeSeries(t0, dt, data, "raw" if raw else None)


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(jsonable(obj), indent=1))


_SPLIT = (("v", 3), ("p", 1), ("R", 6), ("kappa", 1), ("phi", 3))


def sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def save_tuple(tup, path) -> Path:
    path = Path(path)
    data = np.concatenate([tup.fields()[k].data for k, _ in _SPLIT], axis=1)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_pfld(path, TimeSeries(tup.v.t0, tup.dt, data, "raw"))
        write_json(sidecar(path), {"q": tup.q, "dt": tup.dt, "t0": tup.v.t0, "n": tup.n,
                                   "E": tup.E, "dE": tup.dE, "meta": tup.meta})
    except OSError as e:
        raise FieldIOError(f"cannot write tuple {path}: {e}") from e
    return path


def load_tuple(path):
    from .iteration import EulerReynoldsTuple
    path = Path(path)
    try:
        head = json.loads(sidecar(path).read_text())
    except (OSError, ValueError) as e:
        raise FieldIOError(f"cannot read {sidecar(path)}: {e}") from e
    raw = read_pfld(path, head["dt"], raw=True)
    if raw.data.shape[1] != sum(c for _, c in _SPLIT):
        raise FieldIOError(f"{path}: {raw.data.shape[1]} components, a tuple has 14")
    parts, c0 = {}, 0
    for k, c in _SPLIT:
        parts[k] = TimeSeries(raw.t0, raw.dt, raw.data[:, c0:c0 + c])
        c0 += c
    return EulerReynoldsTuple(E=np.array(head["E"], float), dE=np.array(head["dE"], float),
                              q=int(head["q"]), meta=head.get("meta", {}), **parts)


def write_slice_csv(path, ts: TimeSeries, t: float, axis: int = 2, index: int = 0) -> None:
    """One plane of every component at sample t, one row per grid point."""
    a = ts.data[ts.index_of(t)]
    n = a.shape[-1]
    sl = np.take(a, index, axis=axis + 1)
    h = 2 * math.pi / n
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x_i", "x_j"] + [f"c{k}" for k in range(a.shape[0])])
        for i in range(n):
            for j in range(n):
                w.writerow([i, j, -math.pi + i * h, -math.pi + j * h] + [repr(float(v)) for v in sl[:, i, j]])
