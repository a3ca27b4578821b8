"""Adam with the inverse-square-root warmup learning-rate schedule.

The schedule is d_model^-0.5 * min(step^-0.5, step * warmup^-1.5): linear
ramp to the peak at step == warmup_steps, then 1/sqrt decay. Optimizer state
keeps per-parameter first/second moments keyed by parameter name.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["OptimizerState", "lr_at_step", "adam_step"]


@dataclass
class OptimizerState:
    d_model: int
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    lr_scale: float = 1.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.d_model <= 0 or self.warmup_steps <= 0:
            raise ValueError("OptimizerState: d_model and warmup_steps must be positive")


def lr_at_step(state: OptimizerState) -> float:
    """Scheduled learning rate at the optimizer's current step (step >= 1)."""
    t = state.step
    if t < 1:
        raise ValueError("lr_at_step: undefined at step 0")
    return (
        state.lr_scale
        * state.d_model ** -0.5
        * min(t ** -0.5, t * state.warmup_steps ** -1.5)
    )


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState):
    """One Adam update with bias correction; mutates params and state in place."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param shape {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {name!r}")

    state.step += 1
    lr = lr_at_step(state)
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
