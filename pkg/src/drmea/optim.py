"""Adam and momentum SGD over a dict of named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)   # first moment (adam) or velocity (sgd)
    v: dict = field(default_factory=dict)   # second moment (adam only)
    t: int = 0


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float = 2e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps_opt: float = 1e-8):
    """Bias-corrected Adam. Returns new ``(params, state)``; inputs are not modified."""
    t = state.t + 1
    new_p, m, v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m[name] = beta1 * state.m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v[name] = beta2 * state.v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m[name] / (1 - beta1**t)
        v_hat = v[name] / (1 - beta2**t)
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps_opt)
    return new_p, OptimizerState(m, v, t)


def annealed_lr(lr0: float, progress: float, alpha: float = 10.0, beta: float = 0.75) -> float:
    return lr0 / (1.0 + alpha * progress) ** beta


def sgd_momentum_step(params: dict, grads: dict, state: OptimizerState, progress: float,
                      lr0: float = 0.003, momentum: float = 0.9, weight_decay: float = 5e-4,
                      alpha: float = 10.0, beta: float = 0.75):
    """Momentum SGD with weight decay and the annealed rate lr0 / (1 + alpha p)^beta."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    lr = annealed_lr(lr0, progress, alpha, beta)
    new_p, vel = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        vel[name] = momentum * state.m.get(name, np.zeros_like(p)) - lr * (g + weight_decay * p)
        new_p[name] = p + vel[name]
    return new_p, OptimizerState(vel, {}, state.t + 1)
