"""Fisher information, effective dimension and Fourier probes of the models.

Both model families are turned into a categorical distribution over actions
with a softmax of their outputs, so the Fisher information of quantum and
classical models is computed the same way.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ansatz import QModel, build_template, default_observables, softmax
from .data import collect_random
from .grad import shifted_expectations
from .mlp import MlpModel, activations, init_mlp

PSD_TOL = 1e-8


# ----------------------------------------------------------------------------
# logit Jacobians


def quantum_logit_jacobian(model: QModel, states) -> tuple[np.ndarray, np.ndarray]:
    """Logits ``w * <O>`` of shape (N, A) and their Jacobian (N, A, P + A).

    Angle derivatives come from the shift rule, output-weight derivatives are
    the expectations themselves.
    """
    x = np.asarray(states, dtype=float)
    rows = x.reshape(len(x) if x.ndim > 1 else 1, model.template.n_features)
    plain, jac = shifted_expectations(model, rows)
    n, a = plain.shape
    d_theta = model.w[None, :, None] * jac
    d_w = np.zeros((n, a, a))
    d_w[:, np.arange(a), np.arange(a)] = plain
    return model.w * plain, np.concatenate([d_theta, d_w], axis=2)


def mlp_logit_jacobian(model: MlpModel, states) -> tuple[np.ndarray, np.ndarray]:
    """Outputs (N, A) and per-sample Jacobian (N, A, n_params), flat layout of ``get_flat``."""
    x = np.asarray(states, dtype=float).reshape(-1, model.sizes[0])
    acts = activations(model, x)
    n, a = len(x), model.sizes[-1]
    # delta[n, k, j]: derivative of output k w.r.t. pre-activation j of the current layer
    delta = np.broadcast_to(np.eye(a), (n, a, a)).copy()
    blocks = []
    for l in range(len(model.weights) - 1, -1, -1):
        dw = np.einsum("ni,nkj->nkij", acts[l], delta).reshape(n, a, -1)
        blocks.append(np.concatenate([dw, delta], axis=2))
        if l:
            delta = np.einsum("nkj,ij->nki", delta, model.weights[l]) * (acts[l] > 0)[:, None, :]
    return acts[-1], np.concatenate(blocks[::-1], axis=2)


def fim_from_logits(logits: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """Empirical Fisher information of softmax(logits), averaged over samples.

    ``F = mean_s sum_a p(a|s) g_a g_a^T`` with ``g_a`` the score of action ``a``.
    """
    p = softmax(logits)
    mean_jac = np.einsum("na,nad->nd", p, jac)
    scores = jac - mean_jac[:, None, :]
    fim = np.einsum("na,nad,nae->de", p, scores, scores) / len(logits)
    return 0.5 * (fim + fim.T)


def empirical_fim(model, states) -> np.ndarray:
    if isinstance(model, QModel):
        return fim_from_logits(*quantum_logit_jacobian(model, states))
    if isinstance(model, MlpModel):
        return fim_from_logits(*mlp_logit_jacobian(model, states))
    raise TypeError(f"unsupported model type {type(model).__name__}")


# ----------------------------------------------------------------------------
# spectra and effective dimension


def _check_symmetric(m: np.ndarray, tol: float = 1e-10) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if np.max(np.abs(m - m.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")


def eigen_spectrum(fims: Sequence[np.ndarray], bins: int | np.ndarray = 20) -> tuple[np.ndarray, np.ndarray]:
    """Pooled eigenvalue histogram; returns (edges, fraction of eigenvalues per bin)."""
    eigs = []
    for f in fims:
        f = np.asarray(f, dtype=float)
        _check_symmetric(f)
        eigs.append(np.linalg.eigvalsh(f))
    values = np.concatenate(eigs)
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts / counts.sum()


def normalize_fims(fims: Sequence[np.ndarray]) -> np.ndarray:
    """Scale all matrices by one factor so that their mean trace equals d."""
    stack = np.asarray(fims, dtype=float)
    d = stack.shape[-1]
    mean_trace = np.mean(np.trace(stack, axis1=1, axis2=2))
    if mean_trace <= 0:
        return np.zeros_like(stack)
    return stack * (d / mean_trace)


def _logsumexp(v: np.ndarray) -> float:
    top = np.max(v)
    return float(top + np.log(np.sum(np.exp(v - top))))


def effective_dimension(fims: Sequence[np.ndarray], ns: Sequence[float], normalized: bool = False) -> np.ndarray:
    """``2 log(mean_theta sqrt(det(1 + k F_hat))) / log k`` with ``k = n / (2 pi log n)``.

    ``fims`` holds one Fisher matrix per parameter sample; they are trace
    normalized unless ``normalized`` says that was already done.
    """
    stack = np.asarray(fims, dtype=float)
    eigs = []
    for f in stack:
        _check_symmetric(f)
        lam = np.linalg.eigvalsh(f)
        if lam.size and lam.min() < -PSD_TOL * max(1.0, lam.max()):
            raise ValueError(f"matrix is not positive semidefinite (eigenvalue {lam.min():.3e})")
        eigs.append(lam)
    lam = np.clip(np.asarray(eigs), 0.0, None)
    if not normalized:
        d = stack.shape[-1]
        mean_trace = lam.sum(axis=1).mean()
        lam = lam * (d / mean_trace) if mean_trace > 0 else np.zeros_like(lam)
    out = []
    for n in ns:
        if n < 2:
            raise ValueError(f"n must be at least 2, got {n}")
        kappa = n / (2 * np.pi * np.log(n))
        half_logdet = 0.5 * np.log1p(kappa * lam).sum(axis=1)
        log_mean = _logsumexp(half_logdet) - np.log(len(half_logdet))
        out.append(2 * log_mean / np.log(kappa))
    return np.array(out)


# ----------------------------------------------------------------------------
# Fisher studies over random parameters


def sample_states(count: int, seed: int) -> np.ndarray:
    """Normalized states visited by a random policy."""
    return collect_random(count, seed).s


def quantum_fims(
    strategy: str, states: np.ndarray, n_theta: int, rng: np.random.Generator, layers: int = 5
) -> list[np.ndarray]:
    """FIMs at ``n_theta`` parameter points drawn uniformly from [-pi, pi]."""
    template = build_template(strategy, layers, 4)
    obs = default_observables(4, 2)
    out = []
    for _ in range(n_theta):
        flat = rng.uniform(-np.pi, np.pi, template.n_params + len(obs))
        model = QModel(template, flat[: template.n_params], flat[template.n_params :], obs)
        out.append(empirical_fim(model, states))
    return out


def classical_fims(sizes, states: np.ndarray, n_theta: int, rng: np.random.Generator) -> list[np.ndarray]:
    """FIMs at ``n_theta`` parameter points drawn from the initializer."""
    return [empirical_fim(init_mlp(sizes, rng), states) for _ in range(n_theta)]


# ----------------------------------------------------------------------------
# Fourier probes


@dataclass
class FourierSpectrum:
    feature: int
    frequencies: np.ndarray
    power: np.ndarray

    def out_of_band(self, cutoff: int) -> float:
        """Relative power at integer frequencies with ``|w| > cutoff``."""
        total = self.power.sum()
        if total == 0:
            return 0.0
        return float(self.power[np.abs(self.frequencies) > cutoff].sum() / total)

    def cutoff(self, rel_tol: float = 1e-10) -> int:
        """Highest frequency carrying more than ``rel_tol`` of the total power."""
        total = self.power.sum()
        live = np.abs(self.frequencies[self.power > rel_tol * total])
        return int(live.max()) if live.size else 0


def fourier_spectrum(
    fn: Callable[[np.ndarray], np.ndarray],
    feature: int,
    grid: int = 64,
    base: np.ndarray | None = None,
    n_features: int = 4,
) -> FourierSpectrum:
    """Power per integer frequency of ``fn`` along one input feature.

    ``fn`` maps a batch of inputs (grid, n_features) to scalar outputs; the
    chosen feature sweeps [0, 2 pi) while the others stay at ``base``.
    """
    if grid < 3:
        raise ValueError(f"grid too small: {grid}")
    x = np.tile(np.zeros(n_features) if base is None else np.asarray(base, dtype=float), (grid, 1))
    x[:, feature] = 2 * np.pi * np.arange(grid) / grid
    values = np.asarray(fn(x), dtype=float).reshape(grid)
    coeffs = np.fft.fft(values) / grid
    freqs = np.rint(np.fft.fftfreq(grid, d=1.0 / grid)).astype(int)
    order = np.argsort(freqs, kind="stable")
    return FourierSpectrum(feature, freqs[order], np.abs(coeffs[order]) ** 2)


# ----------------------------------------------------------------------------
# reports


def write_histogram_csv(path, edges: np.ndarray, density: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "density"])
        for lo, hi, d in zip(edges[:-1], edges[1:], density):
            writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])


def write_deff_csv(path, ns: Sequence[float], values: Sequence[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "d_eff"])
        for n, v in zip(ns, values):
            writer.writerow([repr(float(n)), repr(float(v))])


def write_fourier_csv(path, spectra: Sequence[FourierSpectrum]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "frequency", "power"])
        for spec in spectra:
            for w, p in zip(spec.frequencies, spec.power):
                writer.writerow([spec.feature, int(w), repr(float(p))])
