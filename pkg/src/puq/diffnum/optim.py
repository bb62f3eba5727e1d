from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


def global_norm(grads: Sequence[np.ndarray | None]) -> float:
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_grad_norm(params: Sequence[Tensor], threshold: float) -> float:
    """Rescale all ``.grad`` arrays in place so their joint L2 norm is at most ``threshold``.

    Returns the norm measured before clipping.
    """
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm([p.grad for p in params])
    if norm > threshold:
        scale = threshold / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.dtype)
    return norm


def cosine_lr(lr: float, epoch: int, epochs: int) -> float:
    """Step size decayed from ``lr`` towards zero along a half cosine over ``epochs``."""
    return 0.5 * lr * (1.0 + np.cos(np.pi * epoch / epochs))


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class Adam:
    params: list[Tensor]
    lr: float = 1e-3
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.state = AdamState(
            m=[np.zeros_like(p.data) for p in self.params],
            v=[np.zeros_like(p.data) for p in self.params],
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)


def adam_step(params: Sequence[Tensor], grads, state: AdamState, lr: float):
    """Bias-corrected Adam update, in place on ``params[i].data``."""
    state.t += 1
    t, b1, b2 = state.t, state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0:
            continue
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.dtype)
