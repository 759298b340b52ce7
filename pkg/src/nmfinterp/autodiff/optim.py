from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor

DEFAULT_LR = 2e-4


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros(p.shape, dtype=np.float64) for p in params],
            v=[np.zeros(p.shape, dtype=np.float64) for p in params],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float = DEFAULT_LR,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    A ``None`` gradient counts as zero. Moments are kept in float64.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step (parameter/grad/state counts)", (len(params),), (len(grads),), (len(state.m),))
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.m[i].shape != p.shape or (g is not None and g.shape != p.shape):
            raise ShapeError("adam_step", p.shape, state.m[i].shape, None if g is None else g.shape)
        g64 = np.zeros(p.shape) if g is None else g.astype(np.float64)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g64
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g64 * g64
        step = lr * (state.m[i] / bc1) / (np.sqrt(state.v[i] / bc2) + eps)
        p.data -= step.astype(p.data.dtype)
    return state


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState.zeros_like(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.beta1, self.beta2, self.eps)
