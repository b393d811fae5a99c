"""Adam with decoupled weight decay, operating on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 5e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ShapeError("Adam betas must lie in (0,1)")
        if self.t < 0:
            raise ShapeError("Adam step counter must be >= 0")


def adam_step(params: Dict[str, Tensor], state: AdamState) -> AdamState:
    """One Adam update over every parameter with a gradient.

    Weight decay is decoupled: p <- p - lr * wd * p is applied before the
    moment-based update, so the moments never see the decay term.
    Parameters whose grad is None are treated as zero-gradient.
    """
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        if state.weight_decay:
            p.data = p.data - state.lr * state.weight_decay * p.data
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return state
