"""Fully connected ReLU networks with hand-written backpropagation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpModel:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l] has shape (sizes[l], sizes[l + 1])
    biases: list[np.ndarray]

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("need one weight matrix and bias per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[l], self.sizes[l + 1]) or b.shape != (self.sizes[l + 1],):
                raise ValueError(f"layer {l} has shapes {w.shape}, {b.shape}")

    @property
    def n_params(self) -> int:
        return param_count(self.sizes)

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} values, got shape {flat.shape}")
        pos = 0
        for l in range(len(self.weights)):
            fan_in, fan_out = self.sizes[l], self.sizes[l + 1]
            self.weights[l] = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out).copy()
            pos += fan_in * fan_out
            self.biases[l] = flat[pos : pos + fan_out].copy()
            pos += fan_out

    def copy(self) -> "MlpModel":
        return MlpModel(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def param_count(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def mlp_sizes(hidden: int, inputs: int = 4, outputs: int = 2, depth: int = 2) -> tuple[int, ...]:
    return (inputs,) + (hidden,) * depth + (outputs,)


def init_mlp(sizes, rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    sizes = tuple(sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases)


def activations(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(z if l == last else np.maximum(z, 0.0))
    return acts


def forward(model: MlpModel, s_norm) -> np.ndarray:
    x = np.asarray(s_norm, dtype=float)
    return activations(model, x)[-1]


def backward(model: MlpModel, s_norm, dout) -> np.ndarray:
    """Gradient of ``sum(dout * forward(s_norm))`` w.r.t. the flat parameters."""
    x = np.asarray(s_norm, dtype=float)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    delta = np.asarray(dout, dtype=float).reshape(len(x2), -1)
    acts = activations(model, x2)
    grads = []
    for l in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append((acts[l].T @ delta).ravel())
        if l:
            delta = (delta @ model.weights[l].T) * (acts[l] > 0)
    return np.concatenate(grads[::-1])
