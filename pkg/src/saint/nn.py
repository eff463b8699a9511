"""Residual dense network (RDN) trunk shared by the AMI feature learner and RFN."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .params import ParamSet
from .tensor import Tensor, add, concat_channels, conv2d, relu


@dataclass(frozen=True)
class RdnConfig:
    in_channels: int
    base_channels: int
    rdb_count: int
    convs_per_rdb: int
    growth_rate: int
    kernel_size: int = 3

    def __post_init__(self):
        for name in ("in_channels", "base_channels", "rdb_count", "convs_per_rdb", "growth_rate"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")

    def as_dict(self) -> dict:
        return asdict(self)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def add_conv(ps: ParamSet, name: str, c_out: int, c_in: int, k: int, rng, zero=False):
    shape = (c_out, c_in, k, k)
    ps.add(f"{name}.w", np.zeros(shape) if zero else uniform_fan_in(rng, shape))
    ps.add(f"{name}.b", np.zeros(c_out))


def apply_conv(ps: ParamSet, name: str, x: Tensor) -> Tensor:
    return conv2d(x, ps[f"{name}.w"], ps[f"{name}.b"])


def init_rdn(ps: ParamSet, prefix: str, cfg: RdnConfig, rng: np.random.Generator) -> None:
    k, g0, g = cfg.kernel_size, cfg.base_channels, cfg.growth_rate
    add_conv(ps, f"{prefix}.sfe1", g0, cfg.in_channels, k, rng)
    add_conv(ps, f"{prefix}.sfe2", g0, g0, k, rng)
    for d in range(cfg.rdb_count):
        for c in range(cfg.convs_per_rdb):
            add_conv(ps, f"{prefix}.rdb{d}.conv{c}", g, g0 + c * g, k, rng)
        add_conv(ps, f"{prefix}.rdb{d}.lff", g0, g0 + cfg.convs_per_rdb * g, 1, rng)
    add_conv(ps, f"{prefix}.gff1", g0, cfg.rdb_count * g0, 1, rng)
    add_conv(ps, f"{prefix}.gff2", g0, g0, k, rng)


def rdn_forward(ps: ParamSet, prefix: str, x: Tensor, cfg: RdnConfig) -> Tensor:
    """Shallow convs, residual dense blocks, global fusion and global residual."""
    f1 = apply_conv(ps, f"{prefix}.sfe1", x)
    h = apply_conv(ps, f"{prefix}.sfe2", f1)
    block_outs = []
    for d in range(cfg.rdb_count):
        feats = h
        for c in range(cfg.convs_per_rdb):
            out = relu(apply_conv(ps, f"{prefix}.rdb{d}.conv{c}", feats))
            feats = concat_channels([feats, out])
        h = add(apply_conv(ps, f"{prefix}.rdb{d}.lff", feats), h)
        block_outs.append(h)
    g = apply_conv(ps, f"{prefix}.gff1", concat_channels(block_outs))
    g = apply_conv(ps, f"{prefix}.gff2", g)
    return add(g, f1)


def rdn_kernel_chain(cfg: RdnConfig) -> list[int]:
    """Kernel sizes along the longest sequential path through the trunk."""
    k = cfg.kernel_size
    chain = [k, k]
    for _ in range(cfg.rdb_count):
        chain += [k] * cfg.convs_per_rdb + [1]
    return chain + [1, k]
