"""Spacing-aware volumes, orthogonal views, axial decimation and phantoms.

Arrays are indexed ``[x, y, z]``; x is the sagittal axis, y the coronal axis
and z the axial (sparsely sampled) axis. Spacing is millimetres per voxel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

VIEWS = ("sagittal", "coronal", "axial")


@dataclass(frozen=True)
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float]
    norm: tuple[float, float] | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"volume needs three positive extents, got {arr.shape}")
        sp = tuple(float(s) for s in self.spacing)
        if len(sp) != 3 or min(sp) <= 0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray, spacing=None) -> "Volume":
        return replace(self, data=data, spacing=self.spacing if spacing is None else spacing)

    def equals(self, other: "Volume") -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class SliceStack:
    """Slices of one view, stacked on axis 0, with their in-plane spacing."""

    view: str
    slices: np.ndarray
    spacing: tuple[float, float]
    index_spacing: float = field(default=1.0)

    def __len__(self) -> int:
        return self.slices.shape[0]


def normalize(data: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    lo, hi = float(data.min()), float(data.max())
    if hi == lo:
        return np.zeros_like(data, dtype=np.float64), (lo, hi)
    return (data - lo) / (hi - lo), (lo, hi)


def decimate_z(v: Volume, r_z: int) -> Volume:
    """Keep axial slices ``0, r_z, 2 r_z, ...``; no low-pass filtering."""
    r_z = int(r_z)
    if r_z < 1:
        raise ValueError(f"r_z must be >= 1, got {r_z}")
    if r_z > v.dims[2]:
        raise ValueError(f"r_z={r_z} exceeds the {v.dims[2]} axial slices")
    rx, ry, rz = v.spacing
    return Volume(v.data[:, :, ::r_z].copy(), (rx, ry, rz * r_z), v.norm)


def sparse_pair(dense: Volume, r_z: int) -> tuple[Volume, Volume]:
    """(ground truth cropped to ``r_z * Z'`` slices, its decimation)."""
    zs = dense.dims[2] // r_z
    if zs < 1:
        raise ValueError(f"volume with {dense.dims[2]} slices too short for r_z={r_z}")
    gt = dense.with_data(dense.data[:, :, : r_z * zs])
    return gt, decimate_z(gt, r_z)


def extract_view(v: Volume, view: str) -> SliceStack:
    rx, ry, rz = v.spacing
    if view == "sagittal":
        return SliceStack(view, v.data.copy(), (ry, rz), rx)
    if view == "coronal":
        return SliceStack(view, v.data.transpose(1, 0, 2).copy(), (rx, rz), ry)
    if view == "axial":
        return SliceStack(view, v.data.transpose(2, 0, 1).copy(), (rx, ry), rz)
    raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def assemble(view: str, slices, spacing: Sequence[float] | None = None, norm=None) -> Volume:
    """Inverse of :func:`extract_view`.

    ``slices`` is a :class:`SliceStack` or an array / list of equal-shape
    slices; ``spacing`` is the full ``(R_x, R_y, R_z)``. When omitted it is
    rebuilt from the stack's in-plane and index spacing.
    """
    if isinstance(slices, SliceStack):
        a, b = slices.spacing
        if spacing is None:
            spacing = {
                "sagittal": (slices.index_spacing, a, b),
                "coronal": (a, slices.index_spacing, b),
                "axial": (a, b, slices.index_spacing),
            }[view]
        slices = slices.slices
    if isinstance(slices, (list, tuple)):
        shapes = {np.shape(s) for s in slices}
        if len(shapes) != 1:
            raise ValueError(f"ragged slice stack: shapes {sorted(shapes)}")
        slices = np.stack(slices)
    arr = np.asarray(slices, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"slice stack must be 3-D, got {arr.shape}")
    if spacing is None:
        raise ValueError("spacing is required when assembling raw arrays")
    if view == "sagittal":
        data = arr
    elif view == "coronal":
        data = arr.transpose(1, 0, 2)
    elif view == "axial":
        data = arr.transpose(1, 2, 0)
    else:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")
    return Volume(np.ascontiguousarray(data), tuple(spacing), norm)


# ----------------------------------------------------------------------------
# phantoms

RECIPES = ("ellipsoids", "laminae", "ramp", "laminae+ellipsoids")


def _grid_mm(dims, spacing):
    axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def _ellipsoids(dims, spacing, rng, count=8, softness=0.15):
    x, y, z = _grid_mm(dims, spacing)
    extent = np.array(dims) * np.array(spacing)
    out = np.zeros(dims)
    for _ in range(count):
        c = rng.uniform(0.15, 0.85, 3) * extent
        r = rng.uniform(0.12, 0.35, 3) * extent
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        rho = np.sqrt(((x - c[0]) / r[0]) ** 2 + ((y - c[1]) / r[1]) ** 2 + ((z - c[2]) / r[2]) ** 2)
        out += amp / (1.0 + np.exp((rho - 1.0) / softness))
    return out


def _laminae(dims, spacing, rng, period=None):
    x, y, z = _grid_mm(dims, spacing)
    if period is None:
        period = rng.uniform(8.0, 16.0)
    extent = np.array(dims[:2]) * np.array(spacing[:2])
    tilt = rng.uniform(-0.3, 0.3, 2)
    bend_amp = rng.uniform(0.5, 2.0) * period
    kx, ky = 2 * np.pi / (extent * rng.uniform(0.8, 1.6, 2))
    bend = bend_amp * np.sin(kx * x + rng.uniform(0, 2 * np.pi)) * np.cos(ky * y)
    phase = rng.uniform(0, 2 * np.pi)
    return np.sin(2 * np.pi * (z + tilt[0] * x + tilt[1] * y + bend) / period + phase)


def _ramp(dims, spacing, rng):
    x, y, z = _grid_mm(dims, spacing)
    a, b = rng.uniform(-1.0, 1.0, 2)
    c = rng.uniform(0.5, 1.5)
    return a * x + b * y + c * z


def phantom(dims, spacing, seed: int, recipe: str, **opts) -> Volume:
    """Deterministic synthetic volume normalized to [0, 1].

    Recipes: ``ellipsoids`` (sum of soft-edged random ellipsoids),
    ``laminae`` (sinusoidal layers along z with period ``period`` mm, gently
    tilted and bent in-plane), ``ramp`` (affine, strictly increasing in z),
    ``laminae+ellipsoids`` (half-weight laminae over an ellipsoid field).
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 8:
        raise ValueError(f"phantom dims must be three extents >= 8, got {dims}")
    rng = np.random.default_rng(seed)
    if recipe == "ellipsoids":
        raw = _ellipsoids(dims, spacing, rng, **opts)
    elif recipe == "laminae":
        raw = _laminae(dims, spacing, rng, **opts)
    elif recipe == "ramp":
        raw = _ramp(dims, spacing, rng)
    elif recipe == "laminae+ellipsoids":
        lam = normalize(_laminae(dims, spacing, rng, **opts))[0]
        raw = 0.5 * lam + normalize(_ellipsoids(dims, spacing, rng))[0]
    else:
        raise ValueError(f"unknown recipe {recipe!r}; expected one of {RECIPES}")
    data, bounds = normalize(raw)
    return Volume(data, tuple(spacing), bounds)
