"""Binary operator container and deterministic CSV/JSON writers.

Container layout (little-endian)::

    b"PIMH" | version u32 | rows u64 | cols u64 | rows*cols float64, row-major
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError

MAGIC = b"PIMH"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


def operator_to_bytes(m) -> bytes:
    m = np.asarray(m, dtype="<f8")
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise DimensionError("container holds 1-D or 2-D arrays only")
    return _HEADER.pack(MAGIC, VERSION, m.shape[0], m.shape[1]) + np.ascontiguousarray(m).tobytes()


def operator_from_bytes(buf: bytes, offset=0):
    """Decode one container starting at ``offset``; returns ``(array, next_offset)``."""
    magic, version, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise ParameterError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ParameterError(f"unsupported container version {version}")
    start = offset + _HEADER.size
    end = start + 8 * rows * cols
    if end > len(buf):
        raise ParameterError("truncated container")
    arr = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start)
    return arr.reshape(rows, cols).astype(np.float64), end


def save_operator(path, m):
    Path(path).write_bytes(operator_to_bytes(m))


def load_operator(path) -> np.ndarray:
    arr, _ = operator_from_bytes(Path(path).read_bytes())
    return arr


def save_arrays(path, arrays):
    """Concatenate several containers into one file."""
    Path(path).write_bytes(b"".join(operator_to_bytes(a) for a in arrays))


def load_arrays(path):
    buf = Path(path).read_bytes()
    out, off = [], 0
    while off < len(buf):
        arr, off = operator_from_bytes(buf, off)
        out.append(arr)
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Write a CSV with a header row; floats use ``repr`` for exact round-trips."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_field(stem, values, grid_descriptor):
    """Store a medium or wavefield as ``<stem>.bin`` plus ``<stem>.json``."""
    stem = Path(stem)
    save_operator(stem.with_suffix(".bin"), np.asarray(values).reshape(1, -1))
    write_json(stem.with_suffix(".json"), grid_descriptor)


def load_field(stem):
    stem = Path(stem)
    values = load_operator(stem.with_suffix(".bin")).ravel()
    with open(stem.with_suffix(".json")) as fh:
        desc = json.load(fh)
    return values, desc
