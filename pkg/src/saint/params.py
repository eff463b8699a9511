"""Named parameter collections and their on-disk form.

A model file pair is ``<stem>.json`` (manifest: kind, architecture config,
seed, dtype, ordered parameter names and shapes) plus ``<stem>.bin``
(little-endian values concatenated in manifest order).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

_DTYPES = {"float64": "<f8", "float32": "<f4"}


class ParamSet:
    """Ordered ``name -> Tensor`` mapping plus the manifest that built it."""

    def __init__(self, kind: str, config: dict, seed: int):
        self.kind = kind
        self.config = dict(config)
        self.seed = int(seed)
        self.tensors: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.tensors[name] = t
        return t

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def num_values(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag
            t.grad = None

    def digest(self) -> str:
        return hashlib.sha256(self.flat().astype("<f8").tobytes()).hexdigest()

    def manifest(self, dtype: str = "float64") -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "seed": self.seed,
            "dtype": dtype,
            "params": [
                {"name": n, "shape": list(t.shape)} for n, t in self.tensors.items()
            ],
        }


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".json", ".bin") else p
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".bin")


def save_params(ps: ParamSet, path, dtype: str = "float64") -> tuple[Path, Path]:
    """Write manifest and blob; ``dtype='float32'`` down-converts the blob."""
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    mpath, bpath = _paths(path)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    mpath.write_text(json.dumps(ps.manifest(dtype), indent=2) + "\n")
    bpath.write_bytes(ps.flat().astype(_DTYPES[dtype]).tobytes())
    return mpath, bpath


def load_params(path, kind: str | None = None) -> ParamSet:
    mpath, bpath = _paths(path)
    man = json.loads(mpath.read_text())
    if kind is not None and man["kind"] != kind:
        raise ValueError(f"{mpath}: expected a {kind!r} model, found {man['kind']!r}")
    blob = np.frombuffer(bpath.read_bytes(), dtype=_DTYPES[man["dtype"]])
    need = sum(int(np.prod(p["shape"])) for p in man["params"])
    if blob.size != need:
        raise ValueError(f"{bpath}: holds {blob.size} values, manifest needs {need}")
    ps = ParamSet(man["kind"], man["config"], man["seed"])
    offset = 0
    for p in man["params"]:
        n = int(np.prod(p["shape"]))
        ps.add(p["name"], blob[offset : offset + n].reshape(p["shape"]))
        offset += n
    return ps
