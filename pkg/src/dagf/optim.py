"""Adam optimizer and the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")


def adam_step(params, grads, state, trainable=None):
    """Apply one bias-corrected Adam update in place.

    ``params`` maps names to Tensors, ``grads`` maps the same names to arrays.
    Returns ``state`` with ``step_count`` incremented.
    """
    names = list(params) if trainable is None else list(trainable)
    for name in names:
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name in names:
        p = params[name]
        g = np.asarray(grads[name], dtype=p.data.dtype)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = (p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    return state


def step_lr(base_lr, epoch, halve_every=80):
    """Learning rate halved every ``halve_every`` epochs."""
    return base_lr * 0.5 ** (epoch // halve_every)
