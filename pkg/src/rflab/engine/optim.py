"""Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update applied in place to ``params`` (arrays).

    ``state`` is lazily sized on the first call. A ``None`` gradient leaves
    its parameter and moments untouched.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise DimensionError(f"Adam state holds {len(state.m)} slots for {len(params)} parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"Adam parameter axis: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


class Adam:
    """Adam over a list of :class:`Tensor` parameters, reading ``.grad``."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )
