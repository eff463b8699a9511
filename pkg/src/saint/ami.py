"""Anisotropic Meta Interpolation: 2-D slice super-resolution along one axis.

A slice ``I_LR`` of shape ``H x W`` (W runs along the sparse z axis) is
upsampled to ``H x r_z W``. Column ``w * r_z`` of the output is the input
column ``w`` untouched; the remaining ``r_z - 1`` interleaved columns come
from convolving RDN features with kernels generated from a filter distance
matrix (FDM) that encodes physical voxel spacing.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .nn import RdnConfig, init_rdn, rdn_forward, rdn_kernel_chain
from .optim import Adam
from .params import ParamSet
from .tensor import (
    Tensor,
    add,
    concat_channels,
    conv2d,
    l1_loss,
    matmul,
    no_grad,
    relu,
    reshape,
    transpose,
)
from .volume import Volume, assemble, extract_view

KIND = "ami"


@dataclass(frozen=True)
class AmiConfig:
    rdb_count: int
    convs_per_rdb: int
    growth_rate: int
    base_channels: int
    kernel_size: int = 3
    input_slices: int = 3
    fg_hidden: int = 64

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if min(self.rdb_count, self.convs_per_rdb, self.growth_rate,
               self.base_channels, self.input_slices, self.fg_hidden) < 1:
            raise ValueError("AMI counts must all be >= 1")

    @property
    def trunk(self) -> RdnConfig:
        return RdnConfig(
            in_channels=self.input_slices,
            base_channels=self.base_channels,
            rdb_count=self.rdb_count,
            convs_per_rdb=self.convs_per_rdb,
            growth_rate=self.growth_rate,
            kernel_size=self.kernel_size,
        )

    def kernel_chain(self) -> list[int]:
        return rdn_kernel_chain(self.trunk)


PAPER = AmiConfig(rdb_count=6, convs_per_rdb=8, growth_rate=32, base_channels=64)
DESK = AmiConfig(rdb_count=2, convs_per_rdb=3, growth_rate=8, base_channels=16)
PRESETS = {"paper": PAPER, "desk": DESK}


# ----------------------------------------------------------------------------
# periodic shuffling


def ps_map(c: int, h: int, w: int, r_z: int) -> tuple[int, int]:
    """Position in the shuffled image of pixel ``(h, w)`` of channel ``c``."""
    if not 0 <= c < r_z:
        raise ValueError(f"channel {c} outside [0, {r_z})")
    return h, w * r_z + c


def periodic_shuffle(stack: np.ndarray) -> np.ndarray:
    """``(r_z, H, W)`` channel stack -> ``(H, r_z W)`` interleaved image."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"expected an (r_z, H, W) stack, got {stack.shape}")
    r, h, w = stack.shape
    return stack.transpose(1, 2, 0).reshape(h, w * r)


def inverse_shuffle(image: np.ndarray, r_z: int) -> np.ndarray:
    image = np.asarray(image)
    h, wr = image.shape
    if wr % r_z:
        raise ValueError(f"width {wr} is not a multiple of r_z={r_z}")
    return image.reshape(h, wr // r_z, r_z).transpose(2, 0, 1)


def _shuffle(t: Tensor) -> Tensor:
    n, r, h, w = t.shape
    return reshape(transpose(t, (0, 2, 3, 1)), (n, h, w * r))


# ----------------------------------------------------------------------------
# filter distance matrices


@dataclass(frozen=True)
class FilterDistanceMatrix:
    c: int
    k: int
    values: np.ndarray
    spacing: tuple[float, float]
    r_z: int


def fdm(c: int, k: int, r_h: float, r_w: float, r_z: int) -> FilterDistanceMatrix:
    """Physical distance (mm) from each tap of a ``k x k`` feature patch to
    the output voxel of channel ``c``, measured on the shuffled output grid
    whose spacing is ``(r_h, r_w)``."""
    if not 1 <= c < r_z:
        raise ValueError(
            f"FDM channel must lie in [1, {r_z}); channel 0 is the observed slice"
        )
    if k % 2 == 0 or k < 1:
        raise ValueError(f"k must be odd, got {k}")
    if r_h <= 0 or r_w <= 0:
        raise ValueError(f"spacing must be positive, got ({r_h}, {r_w})")
    half = k // 2
    ch, cw = ps_map(c, half, half, r_z)
    hh, ww = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    # taps sit on observed (channel-0) positions of the shuffled grid
    dh = (hh - ch) * r_h
    dw = (ww * r_z - cw) * r_w
    return FilterDistanceMatrix(c, k, np.hypot(dh, dw), (float(r_h), float(r_w)), int(r_z))


def fdm_stack(k: int, r_h: float, r_w: float, r_z: int) -> np.ndarray:
    """All FDMs for channels ``1 .. r_z - 1`` as an ``(r_z - 1, k, k)`` array."""
    return np.stack([fdm(c, k, r_h, r_w, r_z).values for c in range(1, r_z)])


# ----------------------------------------------------------------------------
# parameters


def _add_linear(ps: ParamSet, name: str, n_in: int, n_out: int, rng) -> None:
    bound = 1.0 / np.sqrt(n_in)
    ps.add(f"{name}.w", rng.uniform(-bound, bound, size=(n_in, n_out)))
    ps.add(f"{name}.b", np.zeros(n_out))


def init_ami(cfg: AmiConfig = DESK, seed: int = 0) -> ParamSet:
    rng = np.random.default_rng(seed)
    ps = ParamSet(KIND, asdict(cfg), seed)
    init_rdn(ps, "fl", cfg.trunk, rng)
    k2 = cfg.kernel_size**2
    _add_linear(ps, "fg.fc0", k2, cfg.fg_hidden, rng)
    _add_linear(ps, "fg.fc1", cfg.fg_hidden, cfg.fg_hidden, rng)
    _add_linear(ps, "fg.fc2", cfg.fg_hidden, cfg.base_channels * k2, rng)
    return ps


def ami_config(ps: ParamSet) -> AmiConfig:
    return AmiConfig(**ps.config)


def fl_params(ps: ParamSet) -> list[Tensor]:
    return [t for n, t in ps.tensors.items() if n.startswith("fl.")]


def fg_params(ps: ParamSet) -> list[Tensor]:
    return [t for n, t in ps.tensors.items() if n.startswith("fg.")]


# ----------------------------------------------------------------------------
# forward


def _linear(ps: ParamSet, name: str, x: Tensor) -> Tensor:
    return add(matmul(x, ps[f"{name}.w"]), ps[f"{name}.b"])


def filter_bank(distances: np.ndarray, ps: ParamSet) -> Tensor:
    """Map ``(m, k, k)`` distance matrices to ``(m, C', k, k)`` kernels."""
    cfg = ami_config(ps)
    k = cfg.kernel_size
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 3 or d.shape[1:] != (k, k):
        raise ValueError(f"expected FDMs of shape (m, {k}, {k}), got {d.shape}")
    x = Tensor(d.reshape(d.shape[0], k * k))
    x = relu(_linear(ps, "fg.fc0", x))
    x = relu(_linear(ps, "fg.fc1", x))
    x = _linear(ps, "fg.fc2", x)
    return reshape(x, (d.shape[0], cfg.base_channels, k, k))


def generate_filters(p: FilterDistanceMatrix | np.ndarray, ps: ParamSet) -> Tensor:
    """Kernel ``W_c`` of shape ``(C', 1, k, k)`` for one distance matrix."""
    values = p.values if isinstance(p, FilterDistanceMatrix) else np.asarray(p)
    bank = filter_bank(values[None], ps)
    _, c, k, _ = bank.shape
    return reshape(bank, (c, 1, k, k))


def features(triplet, ps: ParamSet) -> Tensor:
    """RDN feature maps ``(C', H, W)`` (batched: ``(N, C', H, W)``)."""
    cfg = ami_config(ps)
    x = triplet if isinstance(triplet, Tensor) else Tensor(triplet)
    channel_axis = x.ndim - 3
    if x.ndim not in (3, 4) or x.shape[channel_axis] != cfg.input_slices:
        raise ValueError(
            f"expected {cfg.input_slices} input slices, got tensor of shape {x.shape}"
        )
    return rdn_forward(ps, "fl", x, cfg.trunk)


def sr_forward(triplets, r_z: int, spacing: tuple[float, float], ps: ParamSet) -> Tensor:
    """Differentiable batched SR: ``(N, 3, H, W)`` -> ``(N, H, r_z W)``."""
    r_z = int(r_z)
    if r_z < 1:
        raise ValueError(f"r_z must be >= 1, got {r_z}")
    x = triplets if isinstance(triplets, Tensor) else Tensor(triplets)
    cfg = ami_config(ps)
    centre = Tensor(x.data[:, cfg.input_slices // 2 : cfg.input_slices // 2 + 1])
    if r_z == 1:
        return reshape(centre, (x.shape[0],) + x.shape[2:])
    feats = features(x, ps)
    kernels = filter_bank(fdm_stack(cfg.kernel_size, spacing[0], spacing[1], r_z), ps)
    interp = conv2d(feats, kernels)
    return _shuffle(concat_channels([centre, interp]))


def make_triplets(stack: np.ndarray, width: int = 3) -> np.ndarray:
    """``(n, H, W)`` slices -> ``(n, width, H, W)`` neighbourhoods, edges replicated."""
    n = stack.shape[0]
    half = width // 2
    idx = np.clip(np.arange(n)[:, None] + np.arange(-half, half + 1)[None], 0, n - 1)
    return stack[idx]


def sr_slice(triplet: np.ndarray, r_z: int, spacing: tuple[float, float], ps: ParamSet) -> np.ndarray:
    """Super-resolve the centre of a ``(3, H, W)`` triplet to ``(H, r_z W)``."""
    triplet = np.asarray(triplet, dtype=np.float64)
    with no_grad():
        return sr_forward(triplet[None], r_z, spacing, ps).data[0]


def view_spacing(sparse: Volume, axis: str, r_z: int) -> tuple[float, float]:
    """(row spacing, SR-grid z spacing) for slices of ``axis``."""
    rx, ry, rz = sparse.spacing
    if axis == "sagittal":
        return ry, rz / r_z
    if axis == "coronal":
        return rx, rz / r_z
    raise ValueError(f"AMI runs on sagittal or coronal slices, got {axis!r}")


def sr_volume(
    sparse: Volume,
    axis: str,
    r_z: int,
    ps: ParamSet,
    batch: int = 16,
    threads: int = 1,
) -> Volume:
    """Super-resolve every slice of one view and reassemble ``(X, Y, r_z Z')``."""
    spacing = view_spacing(sparse, axis, r_z)
    stack = extract_view(sparse, axis)
    trip = make_triplets(stack.slices, ami_config(ps).input_slices)
    chunks = [trip[i : i + batch] for i in range(0, len(trip), batch)]

    def run(chunk):
        with no_grad():
            return sr_forward(chunk, r_z, spacing, ps).data

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outs = list(pool.map(run, chunks))
    else:
        outs = [run(c) for c in chunks]
    rx, ry, rz = sparse.spacing
    return assemble(axis, np.concatenate(outs), (rx, ry, rz / r_z), sparse.norm)


# ----------------------------------------------------------------------------
# training


@dataclass
class AmiSample:
    """One view's mini-batch: neighbourhoods, dense targets, factor, spacing."""

    triplets: np.ndarray
    targets: np.ndarray
    r_z: int
    spacing: tuple[float, float]


def sample_view_batch(
    gt: Volume, sparse: Volume, axis: str, r_z: int, n: int, rng: np.random.Generator
) -> AmiSample:
    lr = extract_view(sparse, axis).slices
    hr = extract_view(gt, axis).slices
    idx = rng.choice(lr.shape[0], size=min(n, lr.shape[0]), replace=False)
    trip = make_triplets(lr)[idx]
    return AmiSample(trip, hr[idx], r_z, view_spacing(sparse, axis, r_z))


def ami_loss(samples: Sequence[AmiSample], ps: ParamSet) -> Tensor:
    """Sum over views of the mean absolute SR error."""
    total = None
    for s in samples:
        pred = sr_forward(s.triplets, s.r_z, s.spacing, ps)
        if pred.shape != s.targets.shape:
            raise ValueError(
                f"target shape {s.targets.shape} does not match prediction {pred.shape}"
            )
        term = l1_loss(pred, s.targets)
        total = term if total is None else add(total, term)
    return total


def ami_train_step(samples: Sequence[AmiSample], ps: ParamSet, opt: Adam) -> float:
    opt.zero_grad()
    loss = ami_loss(samples, ps)
    loss.backward()
    opt.step()
    return loss.item()
