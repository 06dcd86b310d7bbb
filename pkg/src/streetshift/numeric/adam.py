"""Adam with bias correction, updating parameter arrays in place."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step count must be non-negative")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One Adam update of every array in ``params`` that has a gradient.

    Arrays are modified in place (so shared storage stays shared) and the
    same dict is returned together with ``state``.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.step += 1
    t = state.step
    dtype = np.float32
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in sorted(grads):
        p = params[name]
        g = grads[name].astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"{name}: accumulator shape {m.shape} != parameter shape {p.shape}")
        m *= dtype(b1)
        m += dtype(1 - b1) * g
        v *= dtype(b2)
        v += dtype(1 - b2) * (g * g)
        p -= dtype(state.lr) * (m / dtype(c1)) / (np.sqrt(v / dtype(c2)) + dtype(state.eps))
    return params, state
