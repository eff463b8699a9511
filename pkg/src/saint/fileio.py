"""``.svol`` volume container, 16-bit PGM slice export and CSV tables.

``.svol`` layout: 8-byte magic, one line of JSON header terminated by
``\\n`` (dims, spacing in mm, dtype, normalization bounds), then the raw
little-endian payload ordered z-major, then y, then x.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .volume import Volume

MAGIC = b"SVOL\x00\x01\r\n"
_DTYPES = {"float64": "<f8", "float32": "<f4"}


class ContainerError(ValueError):
    """Malformed ``.svol`` file."""


def save_svol(v: Volume, path, dtype: str = "float64") -> Path:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing),
        "dtype": dtype,
        "order": "zyx",
        "norm": None if v.norm is None else list(v.norm),
    }
    payload = v.data.transpose(2, 1, 0).astype(_DTYPES[dtype]).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + json.dumps(header).encode() + b"\n" + payload)
    return path


def svol_header(path) -> dict:
    """Parsed JSON header of a ``.svol`` file, payload not read."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ContainerError(f"{path}: bad container magic")
        line = fh.readline()
    try:
        return json.loads(line)
    except ValueError as exc:
        raise ContainerError(f"{path}: malformed header ({exc})") from None


def load_svol(path) -> Volume:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: bad container magic")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise ContainerError(f"{path}: unterminated header")
    try:
        header = json.loads(raw[len(MAGIC) : end])
        dims = [int(d) for d in header["dims"]]
        spacing = [float(s) for s in header["spacing_mm"]]
        dtype = _DTYPES[header["dtype"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise ContainerError(f"{path}: malformed header ({exc})") from None
    if len(dims) != 3 or min(dims) < 1:
        raise ContainerError(f"{path}: bad dims {dims}")
    if len(spacing) != 3 or min(spacing) <= 0:
        raise ContainerError(f"{path}: non-positive spacing {spacing}")
    payload = raw[end + 1 :]
    itemsize = np.dtype(dtype).itemsize
    need = int(np.prod(dims))
    if len(payload) != need * itemsize:
        raise ContainerError(
            f"{path}: truncated payload, header declares {need} values "
            f"but {len(payload) / itemsize:g} present"
        )
    zyx = np.frombuffer(payload, dtype=dtype).reshape(dims[2], dims[1], dims[0])
    norm = header.get("norm")
    return Volume(
        np.ascontiguousarray(zyx.transpose(2, 1, 0), dtype=np.float64),
        tuple(spacing),
        None if norm is None else tuple(norm),
    )


def export_pgm(slice_: np.ndarray, path) -> Path:
    """Binary 16-bit PGM (P5); rows of the array become image rows."""
    a = np.asarray(slice_, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D slice, got {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(
            f"PGM export needs values in [0, 1], got [{a.min():g}, {a.max():g}]"
        )
    q = np.rint(a * 65535.0).astype(">u2")
    h, w = a.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n65535\n".encode() + q.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(parts[4][: w * h * np.dtype(dtype).itemsize], dtype=dtype)
    return data.reshape(h, w)


def export_csv(rows: Iterable[Mapping], path, columns: Sequence[str] | None = None) -> Path:
    rows = list(rows)
    if columns is None:
        if not rows:
            raise ValueError("cannot infer CSV columns from an empty table")
        columns = list(rows[0].keys())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _cell(row.get(c, "")) for c in columns})
    return path


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
