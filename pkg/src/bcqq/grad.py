"""Gradient estimators for quantum models.

A *loss evaluator* is a callable mapping model outputs of shape (B, A) to
``(loss, dloss_doutputs)``. ``spsa_grad`` and ``finite_diff_grad`` work on a
plain ``params -> loss`` callable instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ansatz import QModel, expectations

HALF_PI = np.pi / 2

LossEvaluator = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class GradEstimate:
    dtheta: np.ndarray
    dw: np.ndarray
    evaluations: int
    loss: float = float("nan")

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.dtheta, self.dw])


def _as_rows(model: QModel, s_norm) -> tuple[np.ndarray, bool]:
    x = np.asarray(s_norm, dtype=float)
    f = model.template.n_features
    if x.ndim <= 1:
        return x.reshape(1, f), True
    return x.reshape(len(x), f), False


def shifted_expectations(model: QModel, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Plain expectations (B, A) and the parameter-shift Jacobian (B, A, P).

    All ``B * (2P + 1)`` circuits run as one batch.
    """
    n_p = model.template.n_params
    b = len(rows)
    shifts = np.concatenate([np.zeros((1, n_p)), HALF_PI * np.eye(n_p), -HALF_PI * np.eye(n_p)])
    thetas = model.theta + shifts
    k = len(thetas)
    ev = expectations(
        model.template,
        model.observables,
        np.repeat(rows, k, axis=0),
        np.tile(thetas, (b, 1)),
    ).reshape(b, k, -1)
    plain = ev[:, 0]
    jac = 0.5 * (ev[:, 1 : 1 + n_p] - ev[:, 1 + n_p :])
    return plain, jac.transpose(0, 2, 1)


def param_shift_expectation_grads(model: QModel, s_norm) -> np.ndarray:
    """d<O_a>/d theta_j via the two-term shift rule.

    Shape (A, P) for one input, (B, A, P) for a batch.
    """
    rows, single = _as_rows(model, s_norm)
    _, jac = shifted_expectations(model, rows)
    return jac[0] if single else jac


def loss_grad_exact(loss: LossEvaluator, model: QModel, s_norm) -> GradEstimate:
    """Chain rule through Q_a = w_a <O_a> with parameter-shift inner gradients."""
    rows, _ = _as_rows(model, s_norm)
    plain, jac = shifted_expectations(model, rows)
    value, dq = loss(model.w * plain)
    dq = np.asarray(dq, dtype=float).reshape(plain.shape)
    dtheta = np.einsum("ba,a,bap->p", dq, model.w, jac)
    dw = (dq * plain).sum(axis=0)
    return GradEstimate(dtheta, dw, 2 * model.template.n_params * len(rows), float(value))


def spsa_grad(
    loss: Callable[[np.ndarray], float], params, c: float, rng: np.random.Generator
) -> GradEstimate:
    """Simultaneous-perturbation estimate from two loss calls.

    Returns the estimate in ``dtheta``; ``dw`` is empty.
    """
    if c <= 0:
        raise ValueError(f"perturbation scale must be positive, got {c}")
    params = np.asarray(params, dtype=float)
    delta = rng.choice(np.array([-1.0, 1.0]), size=params.shape)
    diff = loss(params + c * delta) - loss(params - c * delta)
    return GradEstimate(diff / (2.0 * c * delta), np.zeros(0), 2)


def finite_diff_grad(loss: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    params = np.asarray(params, dtype=float)
    out = np.empty_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e.flat[i] = h
        out.flat[i] = (loss(params + e) - loss(params - e)) / (2 * h)
    return out


def td_loss(actions: np.ndarray, targets: np.ndarray) -> LossEvaluator:
    """Mean squared TD error on the taken actions."""
    actions = np.asarray(actions)
    targets = np.asarray(targets, dtype=float)

    def evaluate(q: np.ndarray) -> tuple[float, np.ndarray]:
        idx = np.arange(len(actions))
        err = q[idx, actions] - targets
        grad = np.zeros_like(q)
        grad[idx, actions] = 2.0 * err / len(actions)
        return float(np.mean(err**2)), grad

    return evaluate


def cross_entropy_loss(actions: np.ndarray) -> LossEvaluator:
    """Mean negative log-likelihood of ``actions`` under softmax(logits)."""
    actions = np.asarray(actions)

    def evaluate(logits: np.ndarray) -> tuple[float, np.ndarray]:
        idx = np.arange(len(actions))
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        grad = np.exp(logp)
        grad[idx, actions] -= 1.0
        return float(-logp[idx, actions].mean()), grad / len(actions)

    return evaluate
