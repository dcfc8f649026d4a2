"""Adam optimizer over named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class OptimizerState:
    """Adam hyperparameters plus per-parameter moment buffers, keyed by name."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


def optimizer_step(params: list[Parameter], state: OptimizerState) -> None:
    """Apply one Adam update in place. Gradients are left untouched.

    Every parameter must have a populated gradient; moment buffers are
    created lazily on the first step and must match parameter shapes after.
    """
    for p in params:
        if p.grad is None:
            raise ValueError(f"optimizer_step: parameter {p.name!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        if m.shape != p.shape:
            raise ValueError(
                f"optimizer_step: moment shape {m.shape} != parameter {p.name!r} shape {p.shape}"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data[...] -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: list[Parameter]) -> None:
    for p in params:
        p.zero_grad()
