"""Circuit templates (baseline, data re-uploading, cyclic re-uploading) and
the quantum Q-value / generative models built on them."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .qsim import Feature, Gate, Observable, Param, expectation, run_circuit
from .qsim import sample_expectations

STRATEGIES = ("baseline", "dru", "cyclic")


@dataclass(frozen=True)
class CircuitTemplate:
    n_qubits: int
    gates: tuple[Gate, ...]
    n_features: int
    n_params: int
    layers: int = 0
    strategy: str = "custom"

    def __post_init__(self):
        for g in self.gates:
            g.validate(self.n_qubits)

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)

    def feature_qubits(self, feature: int) -> list[int]:
        """Qubits that host an encoding of ``feature``, one entry per encoding gate."""
        return [
            g.target
            for g in self.gates
            if isinstance(g.source, Feature) and g.source.index == feature
        ]


def build_template(strategy: str, layers: int = 5, qubits: int = 4) -> CircuitTemplate:
    """Encoding block(s), then per layer RY on every qubit, RZ on every qubit,
    and a CZ ladder (0,1), (1,2), ... on neighbouring qubits.

    ``baseline`` encodes once; ``dru`` re-encodes before every layer with
    feature i on qubit i; ``cyclic`` shifts the assignment by one each block,
    so block l puts feature (i + l) mod n on qubit i.
    """
    strategy = strategy.lower()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    if qubits < 2:
        raise ValueError(f"need at least 2 qubits, got {qubits}")
    gates: list[Gate] = []
    p = 0
    for layer in range(layers):
        if layer == 0 or strategy != "baseline":
            shift = layer if strategy == "cyclic" else 0
            gates += [Gate("RX", q, source=Feature((q + shift) % qubits)) for q in range(qubits)]
        for kind in ("RY", "RZ"):
            for q in range(qubits):
                gates.append(Gate(kind, q, source=Param(p)))
                p += 1
        gates += [Gate("CZ", q + 1, control=q) for q in range(qubits - 1)]
    return CircuitTemplate(qubits, tuple(gates), qubits, p, layers, strategy)


def default_observables(qubits: int = 4, actions: int = 2) -> tuple[Observable, ...]:
    """ZZ on qubit pairs (0,1), (2,3), ... one per action."""
    if 2 * actions > qubits:
        raise ValueError(f"{actions} actions need {2 * actions} qubits")
    return tuple(Observable.zz(2 * a, 2 * a + 1, qubits) for a in range(actions))


@dataclass
class QModel:
    template: CircuitTemplate
    theta: np.ndarray
    w: np.ndarray
    observables: tuple[Observable, ...] = field(default=None)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.observables is None:
            self.observables = default_observables(self.template.n_qubits, len(self.w))
        if self.theta.shape != (self.template.n_params,):
            raise ValueError(f"theta must have length {self.template.n_params}")
        if len(self.observables) != len(self.w):
            raise ValueError("need one output weight per observable")

    @property
    def n_actions(self) -> int:
        return len(self.w)

    @property
    def n_trainable(self) -> int:
        return self.template.n_params + self.n_actions

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.theta, self.w])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_trainable,):
            raise ValueError(f"expected {self.n_trainable} values, got shape {flat.shape}")
        self.theta = flat[: self.template.n_params].copy()
        self.w = flat[self.template.n_params :].copy()

    def copy(self) -> "QModel":
        return replace(self, theta=self.theta.copy(), w=self.w.copy())


def init_qmodel(
    strategy: str = "cyclic",
    layers: int = 5,
    rng: np.random.Generator | None = None,
    qubits: int = 4,
    actions: int = 2,
) -> QModel:
    """Angles uniform on [-pi, pi], output weights 1."""
    template = build_template(strategy, layers, qubits)
    rng = rng if rng is not None else np.random.default_rng()
    theta = rng.uniform(-np.pi, np.pi, template.n_params)
    return QModel(template, theta, np.ones(actions), default_observables(qubits, actions))


def expectations(
    template: CircuitTemplate,
    observables,
    inputs,
    theta,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """<O_a> for each observable; shape (..., A). ``shots=None`` is exact."""
    state = run_circuit(template, inputs, theta)
    if shots is None:
        return np.stack([expectation(state, o) for o in observables], axis=-1)
    if rng is None:
        raise ValueError("finite-shot estimation needs an rng")
    return sample_expectations(state, observables, shots, rng)


def q_values(model: QModel, s_norm, shots: int | None = None, rng=None) -> np.ndarray:
    """Q_a = w_a * <O_a>, for one state (4,) or a batch (B, 4)."""
    return model.w * expectations(model.template, model.observables, s_norm, model.theta, shots, rng)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gen_probs(model: QModel, s_norm, shots: int | None = None, rng=None) -> np.ndarray:
    """Behaviour-policy estimate: softmax over the scaled expectations."""
    return softmax(q_values(model, s_norm, shots, rng))
