"""Binary snapshot files, CSV series and JSON manifests.

Snapshot layout (little-endian)::

    b"CMAF" | u32 version=1 | u32 n | u32 N | f64 t | N**(2n) f64 values

Values are in grid index order (x1, y1, ..., xn, yn), last axis fastest.
All writes go through a temporary file and an atomic rename.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .field import FieldError, ScalarField, TorusGeometry
from .flow import FlowState, rhs
from .kahler import NonlinearityF, metric_from_potential

__all__ = [
    "MAGIC",
    "VERSION",
    "SnapshotError",
    "write_snapshot",
    "read_snapshot",
    "write_csv",
    "write_json",
    "atomic_write_bytes",
]

MAGIC = b"CMAF"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")


class SnapshotError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_snapshot(state: FlowState, path):
    geom = state.phi.geometry
    header = _HEADER.pack(MAGIC, VERSION, geom.n, geom.N, float(state.t))
    payload = np.ascontiguousarray(state.phi.values, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + payload)


def read_snapshot(path, F: NonlinearityF | None = None, log_c: float = 0.0) -> FlowState:
    """Load a snapshot; ``phidot`` is recomputed when ``F`` is given, else None."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated file ({len(raw)} bytes, header needs {_HEADER.size})")
    magic, version, n, N, t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported version {version}")
    try:
        geom = TorusGeometry(n, N)
    except FieldError as err:
        raise SnapshotError(f"{path}: dimension mismatch: {err}") from None
    expected = geom.size * 8
    got = len(raw) - _HEADER.size
    if got < expected:
        raise SnapshotError(f"{path}: truncated file ({got} of {expected} payload bytes)")
    if got > expected:
        raise SnapshotError(
            f"{path}: dimension mismatch ({got} payload bytes for n={n}, N={N}; expected {expected})"
        )
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(geom.shape)
    phi = ScalarField(geom, vals)
    m = metric_from_potential(phi)
    phidot = rhs(phi, F, log_c, m) if F is not None else None
    return FlowState(float(t), phi, m, phidot)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # strict JSON has no NaN or infinities
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    atomic_write_bytes(path, (text + "\n").encode())
