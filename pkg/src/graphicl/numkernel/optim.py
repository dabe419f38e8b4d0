"""Adam with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from graphicl.errors import DimensionError


@dataclass
class OptimizerState:
    lr: float = 0.005
    weight_decay: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict, grads: dict, state: OptimizerState) -> tuple[dict, OptimizerState]:
    """One AdamW update. Returns fresh parameter arrays; inputs are untouched.

    The weight-decay shrink ``p * (1 - lr * wd)`` is applied first, then the
    bias-corrected moment step is subtracted.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None or np.shape(g) != np.shape(p):
            raise DimensionError(f"optimizer_step: gradient for {name!r} has shape "
                                 f"{None if g is None else np.shape(g)}, parameter {np.shape(p)}")
        if name in state.m and state.m[name].shape != np.shape(p):
            raise DimensionError(f"optimizer_step: moment shape mismatch for {name!r}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        shrunk = p * (1.0 - state.lr * state.weight_decay)
        out[name] = shrunk - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state
