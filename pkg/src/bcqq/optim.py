"""Adam and AMSGrad with explicit, copyable moment state."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("adam", "amsgrad")


@dataclass
class OptimizerState:
    size: int
    variant: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    vhat: np.ndarray = field(default=None)

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown optimizer {self.variant!r}")
        for name in ("m", "v", "vhat"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.size))

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.size, self.variant, self.beta1, self.beta2, self.eps, self.t,
            self.m.copy(), self.v.copy(), self.vhat.copy(),
        )


def step(
    state: OptimizerState, params: np.ndarray, grad: np.ndarray, lr: float
) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected update. Returns new params and a new state.

    AMSGrad divides by the running maximum of the second moment, as in
    ``denom = sqrt(max(vhat, v)) / sqrt(1 - beta2**t) + eps``.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != (state.size,) or grad.shape != (state.size,):
        raise ValueError(
            f"expected vectors of length {state.size}, got {params.shape} and {grad.shape}"
        )
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    vhat = np.maximum(state.vhat, v) if state.variant == "amsgrad" else state.vhat.copy()
    second = vhat if state.variant == "amsgrad" else v
    new = OptimizerState(state.size, state.variant, state.beta1, state.beta2, state.eps, t, m, v, vhat)
    denom = np.sqrt(second) * (1 / np.sqrt(1 - state.beta2**t)) + state.eps
    return params - (lr / (1 - state.beta1**t)) * m / denom, new
