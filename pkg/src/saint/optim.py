"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

# beta1 = 0.5 and lr = 1e-4 are the published training settings.
DEFAULT_LR = 1e-4
DEFAULT_BETA1 = 0.5


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, p: Tensor, **hyper) -> "AdamState":
        return cls(np.zeros(p.data.size), np.zeros(p.data.size), **hyper)


def adam_step(params: Sequence[Tensor], states: Sequence[AdamState]) -> None:
    """Apply one Adam update to every parameter, then clear its gradient."""
    if len(params) != len(states):
        raise ValueError(f"{len(params)} params but {len(states)} optimizer states")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} {p.shape} has no gradient")
    for p, s in zip(params, states):
        g = p.grad.reshape(-1)
        s.t += 1
        s.m = s.beta1 * s.m + (1.0 - s.beta1) * g
        s.v = s.beta2 * s.v + (1.0 - s.beta2) * g * g
        m_hat = s.m / (1.0 - s.beta1**s.t)
        v_hat = s.v / (1.0 - s.beta2**s.t)
        step = s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
        p.data = p.data - step.reshape(p.shape)
        p.grad = None


@dataclass
class Adam:
    """Holds one :class:`AdamState` per parameter of a fixed list."""

    params: list[Tensor]
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = 0.999
    eps: float = 1e-8
    states: list[AdamState] = field(init=False)

    def __post_init__(self):
        self.states = [
            AdamState.for_param(
                p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps
            )
            for p in self.params
        ]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        # parameters untouched by the loss get an explicit zero gradient
        for p in self.params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        adam_step(self.params, self.states)
