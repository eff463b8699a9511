"""Residual fusion of the sagittal and coronal reconstructions, per axial slice.

``fused = (sag + cor) / 2 + F(sag, cor)`` where ``F`` is an RDN trunk followed
by a single zero-initialized shape-preserving conv, so an untrained network
reproduces the plain average exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .nn import RdnConfig, add_conv, apply_conv, init_rdn, rdn_forward, rdn_kernel_chain
from .optim import Adam
from .params import ParamSet
from .tensor import Tensor, add, concat_channels, l1_loss, no_grad, reshape, scale
from .volume import Volume

KIND = "rfn"


@dataclass(frozen=True)
class RfnConfig:
    rdb_count: int = 5
    convs_per_rdb: int = 4
    growth_rate: int = 16
    first_conv_channels: int = 32
    input_channels: int = 2
    kernel_size: int = 3

    def __post_init__(self):
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if min(self.rdb_count, self.convs_per_rdb, self.growth_rate,
               self.first_conv_channels, self.input_channels) < 1:
            raise ValueError("RFN counts must all be >= 1")

    @property
    def trunk(self) -> RdnConfig:
        return RdnConfig(
            in_channels=self.input_channels,
            base_channels=self.first_conv_channels,
            rdb_count=self.rdb_count,
            convs_per_rdb=self.convs_per_rdb,
            growth_rate=self.growth_rate,
            kernel_size=self.kernel_size,
        )

    def kernel_chain(self) -> list[int]:
        return rdn_kernel_chain(self.trunk) + [self.kernel_size]


PAPER = RfnConfig()
DESK = RfnConfig(rdb_count=2, convs_per_rdb=3, growth_rate=8, first_conv_channels=16)
PRESETS = {"paper": PAPER, "desk": DESK}


def init_rfn(cfg: RfnConfig = PAPER, seed: int = 0) -> ParamSet:
    rng = np.random.default_rng(seed)
    ps = ParamSet(KIND, asdict(cfg), seed)
    init_rdn(ps, "trunk", cfg.trunk, rng)
    add_conv(ps, "head", 1, cfg.first_conv_channels, cfg.kernel_size, rng, zero=True)
    return ps


def rfn_config(ps: ParamSet) -> RfnConfig:
    return RfnConfig(**ps.config)


def fuse_forward(sag, cor, ps: ParamSet) -> Tensor:
    """Batched fusion: ``(N, H, W)`` pairs -> ``(N, H, W)``."""
    sag = sag if isinstance(sag, Tensor) else Tensor(sag)
    cor = cor if isinstance(cor, Tensor) else Tensor(cor)
    if sag.shape != cor.shape:
        raise ValueError(f"fusion inputs differ in shape: {sag.shape} vs {cor.shape}")
    n, h, w = sag.shape
    pair = concat_channels([reshape(sag, (n, 1, h, w)), reshape(cor, (n, 1, h, w))])
    feats = rdn_forward(ps, "trunk", pair, rfn_config(ps).trunk)
    residual = reshape(apply_conv(ps, "head", feats), (n, h, w))
    return add(scale(add(sag, cor), 0.5), residual)


def fuse_slice(sag: np.ndarray, cor: np.ndarray, ps: ParamSet) -> np.ndarray:
    sag, cor = np.asarray(sag, dtype=np.float64), np.asarray(cor, dtype=np.float64)
    if sag.shape != cor.shape:
        raise ValueError(f"fusion inputs differ in shape: {sag.shape} vs {cor.shape}")
    with no_grad():
        return fuse_forward(sag[None], cor[None], ps).data[0]


def synthesized_indices(z: int, r_z: int) -> np.ndarray:
    return np.array([i for i in range(z) if i % r_z], dtype=int)


def fuse_volume(
    i_sag: Volume, i_cor: Volume, sparse: Volume, r_z: int, ps: ParamSet, batch: int = 8
) -> Volume:
    """Copy observed axial slices from ``sparse``; fuse the synthesized ones."""
    if i_sag.dims != i_cor.dims:
        raise ValueError(f"view volumes differ: {i_sag.dims} vs {i_cor.dims}")
    x, y, z = i_sag.dims
    if sparse.dims[:2] != (x, y) or sparse.dims[2] * r_z != z:
        raise ValueError(
            f"sparse volume {sparse.dims} inconsistent with {i_sag.dims} at r_z={r_z}"
        )
    out = np.empty((x, y, z))
    out[:, :, ::r_z] = sparse.data
    syn = synthesized_indices(z, r_z)
    for i in range(0, len(syn), batch):
        zs = syn[i : i + batch]
        sag = i_sag.data[:, :, zs].transpose(2, 0, 1)
        cor = i_cor.data[:, :, zs].transpose(2, 0, 1)
        with no_grad():
            out[:, :, zs] = fuse_forward(sag, cor, ps).data.transpose(1, 2, 0)
    return Volume(out, i_sag.spacing, sparse.norm)


def rfn_loss(sag: np.ndarray, cor: np.ndarray, gt: np.ndarray, ps: ParamSet) -> Tensor:
    gt = np.asarray(gt)
    if gt.shape != np.shape(sag):
        raise ValueError(f"ground truth {gt.shape} does not match inputs {np.shape(sag)}")
    return l1_loss(fuse_forward(sag, cor, ps), gt)


def rfn_train_step(
    batch: Sequence[np.ndarray], ps: ParamSet, opt: Adam
) -> float:
    """One Adam step on ``(sag, cor, gt)`` stacks of shape ``(N, H, W)``."""
    sag, cor, gt = batch
    opt.zero_grad()
    loss = rfn_loss(sag, cor, gt, ps)
    loss.backward()
    opt.step()
    return loss.item()
