from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


class MissingGradientError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    """SGD hyperparameters plus momentum buffers.

    ``weight_decay`` is the coefficient of an L2 (Gaussian prior) penalty
    folded directly into the update.
    """

    lr: float = 0.05
    weight_decay: float = 0.0
    momentum: float = 0.0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def sgd_step(params: ParameterStore, state: OptimizerState) -> None:
    """``p <- p - lr * (grad + weight_decay * p)`` (with optional momentum), then clears grads."""
    missing = [n for n, t in params.items() if t.grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for {len(missing)} parameter(s), e.g. {missing[0]!r}")
    for name, t in params.items():
        dt = t.data.dtype.type
        g = t.grad + dt(state.weight_decay) * t.data if state.weight_decay else t.grad
        if state.momentum:
            buf = state.buffers.get(name)
            if buf is None:
                buf = np.zeros_like(t.data)
            buf = dt(state.momentum) * buf + g
            state.buffers[name] = buf
            g = buf
        t.data = (t.data - dt(state.lr) * g).astype(t.data.dtype)
    params.zero_grad()
