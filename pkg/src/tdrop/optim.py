"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .errors import UsageError
from .tensor import Tensor


class OptimizerState:
    """Per-parameter first/second moment buffers plus step count."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: OptimizerState,
              lr_override: float | None = None) -> None:
    """One bias-corrected Adam update; clears gradients afterward."""
    state.step_count += 1
    t = state.step_count
    lr = state.lr if lr_override is None else float(lr_override)
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise UsageError(f"adam_step: parameter '{name}' has no gradient")
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / c1
        vhat = v / c2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
        p.grad = None


class Adam:
    """Convenience wrapper binding a parameter dict to an OptimizerState."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(params, lr, beta1, beta2, eps)

    def step(self, lr_override: float | None = None) -> None:
        adam_step(self.params, self.state, lr_override)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
