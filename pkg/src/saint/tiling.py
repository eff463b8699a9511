"""Receptive-field margins, tile planning and stitching-artifact measurement.

A zero-padded stride-1 chain of convolutions with kernel sizes ``k_i`` sees
``sum(k_i // 2)`` voxels past each side of an output voxel. Tiles fetched
with at least that much context reproduce monolithic inference; narrower
margins let the padding leak in near tile seams.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fileio import export_csv, export_pgm
from .params import ParamSet
from .tensor import Tensor, no_grad

Interval = tuple[int, int]


@dataclass(frozen=True)
class ConvChainSpec:
    kernels: tuple[int, ...]
    ndim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))


def margin(spec: ConvChainSpec | Sequence[int]) -> int:
    kernels = spec.kernels if isinstance(spec, ConvChainSpec) else tuple(spec)
    if not kernels:
        raise ValueError("empty convolution chain")
    bad = [k for k in kernels if k % 2 == 0 or k < 1]
    if bad:
        raise ValueError(f"kernel sizes must be odd, got {bad}")
    return sum(k // 2 for k in kernels)


@dataclass(frozen=True)
class Tile:
    core: tuple[Interval, ...]
    fetch: tuple[Interval, ...]

    def core_slices(self) -> tuple[slice, ...]:
        return tuple(slice(a, b) for a, b in self.core)

    def fetch_slices(self) -> tuple[slice, ...]:
        return tuple(slice(a, b) for a, b in self.fetch)

    def core_in_fetch(self) -> tuple[slice, ...]:
        return tuple(slice(c0 - f0, c1 - f0) for (c0, c1), (f0, _) in zip(self.core, self.fetch))


@dataclass(frozen=True)
class TilePlan:
    grid: tuple[int, ...]
    core: tuple[int, ...]
    margin: int
    tiles: tuple[Tile, ...]

    def boundaries(self, axis: int) -> list[int]:
        """Interior core boundaries along ``axis`` (grid edges excluded)."""
        return sorted({t.core[axis][0] for t in self.tiles} - {0})


def _axis_intervals(n: int, core: int, pad: int) -> list[tuple[Interval, Interval]]:
    out = []
    for a in range(0, n, core):
        b = min(a + core, n)
        out.append(((a, b), (max(0, a - pad), min(n, b + pad))))
    return out


def plan(grid: Sequence[int], core: int | Sequence[int], margin: int) -> TilePlan:
    """Partition ``grid`` into cores of ``core`` (last tile per axis shrunk),
    each fetched with ``margin`` extra voxels per side, clamped to bounds."""
    grid = tuple(int(g) for g in grid)
    cores = (int(core),) * len(grid) if np.isscalar(core) else tuple(int(c) for c in core)
    if len(cores) != len(grid):
        raise ValueError(f"core {cores} and grid {grid} differ in rank")
    if min(cores) < 1:
        raise ValueError(f"core size must be positive, got {cores}")
    if any(c > g for c, g in zip(cores, grid)):
        raise ValueError(f"core {cores} larger than grid {grid}")
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    per_axis = [_axis_intervals(g, c, margin) for g, c in zip(grid, cores)]
    tiles = tuple(
        Tile(tuple(c for c, _ in combo), tuple(f for _, f in combo))
        for combo in itertools.product(*per_axis)
    )
    return TilePlan(grid, cores, int(margin), tiles)


def tiled_infer(image: np.ndarray, net: Callable[[np.ndarray], np.ndarray], tp: TilePlan) -> np.ndarray:
    """Run ``net`` on every fetch region and write back the core parts."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != tp.grid:
        raise ValueError(f"plan grid {tp.grid} does not match image {image.shape}")
    out = np.empty_like(image)
    for tile in tp.tiles:
        result = net(image[tile.fetch_slices()])
        out[tile.core_slices()] = result[tile.core_in_fetch()]
    return out


def seam_mask(tp: TilePlan, band: int) -> np.ndarray:
    """Voxels within ``band`` of an interior core boundary on any axis."""
    mask = np.zeros(tp.grid, dtype=bool)
    for axis, n in enumerate(tp.grid):
        idx = np.arange(n)
        near = np.zeros(n, dtype=bool)
        for b in tp.boundaries(axis):
            near |= (idx >= b - band) & (idx < b + band)
        shape = [1] * len(tp.grid)
        shape[axis] = n
        mask |= near.reshape(shape)
    return mask


@dataclass
class StitchReport:
    seam_mad: float
    interior_mad: float
    ratio: float
    band: int
    max_dev: float
    argmax: tuple[int, ...]
    argmax_seam_distance: int
    per_tile: list[dict]
    diff: np.ndarray

    def write(self, csv_path, pgm_path=None) -> None:
        rows = self.per_tile + [{
            "tile_id": "all",
            "seam_mad": self.seam_mad,
            "interior_mad": self.interior_mad,
            "ratio": self.ratio,
        }]
        export_csv(rows, csv_path, ("tile_id", "seam_mad", "interior_mad", "ratio"))
        if pgm_path is not None:
            top = self.diff.max()
            export_pgm(self.diff / top if top > 0 else self.diff, pgm_path)


def _ratio(seam: float, interior: float) -> float:
    if seam == 0.0 and interior == 0.0:
        return 1.0
    if interior == 0.0:
        return float("inf")
    return seam / interior


def _mad(diff: np.ndarray, mask: np.ndarray) -> float:
    return float(diff[mask].mean()) if mask.any() else 0.0


def boundary_distance(tp: TilePlan, point: Sequence[int]) -> int:
    """Distance (voxels, on one axis) from ``point`` to the nearest interior
    core boundary; a boundary ``b`` sits between voxels ``b - 1`` and ``b``."""
    best = None
    for axis, p in enumerate(point):
        for b in tp.boundaries(axis):
            d = b - 1 - p if p < b else p - b
            best = d if best is None else min(best, d)
    return -1 if best is None else int(best)


def stitch_report(tiled: np.ndarray, monolithic: np.ndarray, tp: TilePlan, band: int) -> StitchReport:
    """Compare seam-band and interior deviation between two inferences."""
    if tiled.shape != monolithic.shape:
        raise ValueError(f"shape mismatch: {tiled.shape} vs {monolithic.shape}")
    diff = np.abs(np.asarray(tiled) - np.asarray(monolithic))
    mask = seam_mask(tp, band)
    seam, interior = _mad(diff, mask), _mad(diff, ~mask)
    per_tile = []
    for i, tile in enumerate(tp.tiles):
        sl = tile.core_slices()
        s, it = _mad(diff[sl], mask[sl]), _mad(diff[sl], ~mask[sl])
        per_tile.append({"tile_id": i, "seam_mad": s, "interior_mad": it, "ratio": _ratio(s, it)})
    arg = tuple(int(a) for a in np.unravel_index(np.argmax(diff), diff.shape))
    return StitchReport(
        seam_mad=seam,
        interior_mad=interior,
        ratio=_ratio(seam, interior),
        band=band,
        max_dev=float(diff.max()),
        argmax=arg,
        argmax_seam_distance=boundary_distance(tp, arg),
        per_tile=per_tile,
        diff=diff,
    )


def ami_feature_net(ps: ParamSet) -> tuple[Callable[[np.ndarray], np.ndarray], ConvChainSpec]:
    """2-D image -> mean AMI feature map (image replicated as the triplet)."""
    from .ami import ami_config, features

    cfg = ami_config(ps)

    def net(image: np.ndarray) -> np.ndarray:
        trip = np.repeat(np.asarray(image, dtype=np.float64)[None], cfg.input_slices, axis=0)
        with no_grad():
            return features(Tensor(trip), ps).data.mean(axis=0)

    return net, ConvChainSpec(tuple(cfg.kernel_chain()))


def run_stitch_analysis(
    image: np.ndarray,
    net: Callable[[np.ndarray], np.ndarray],
    spec: ConvChainSpec,
    core: int,
    tile_margin: int,
    out_dir=None,
) -> StitchReport:
    mono = net(image)
    tp = plan(image.shape, core, tile_margin)
    tiled = tiled_infer(image, net, tp)
    report = stitch_report(tiled, mono, tp, margin(spec))
    if out_dir is not None:
        out = Path(out_dir)
        report.write(out / f"stitch_m{tile_margin}.csv", out / f"stitch_m{tile_margin}.pgm")
    return report
