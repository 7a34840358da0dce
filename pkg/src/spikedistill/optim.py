"""Adam parameter updates with bias correction."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


class Adam:
    """Adam state plus the in-place update step.

    Holds first/second moment buffers mirroring each parameter's shape and a
    step counter that increases by one per update.  ``step()`` applies the
    standard bias-corrected update and zeroes the gradients afterwards.
    """

    def __init__(self, params, lr: float = 1e-2, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = [p for p in params]
        for p in self.params:
            if not p.requires_grad:
                raise ShapeError("Adam received a parameter without a gradient slot")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g.shape != m.shape:
                raise ShapeError(f"gradient shape {g.shape} vs moment shape {m.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            g.fill(0.0)
