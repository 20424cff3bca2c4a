"""Dense statevector simulation for small parameterized circuits.

States are complex arrays whose last axis has length ``2**n``; any leading
axes are batch axes. Qubit 0 is the most significant bit of the basis index,
so ``|01>`` on two qubits is index 1 and ``|10>`` is index 2.

Rotations follow ``R_P(phi) = exp(-i * phi * P / 2)``; ``CZ = diag(1, 1, 1, -1)``.
Gates are applied matrix-free: a rotation on qubit q mixes amplitude pairs
whose indices differ only in bit q, and CZ flips signs in place. Whole
circuits run through a compiled loop over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from numba import njit

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CZ",)


class GateError(ValueError):
    """Malformed gate (bad kind, qubit index, or angle source)."""


class BindingError(ValueError):
    """Inputs or parameters do not match what a circuit template expects."""


@dataclass(frozen=True)
class Feature:
    index: int


@dataclass(frozen=True)
class Param:
    index: int


@dataclass(frozen=True)
class Const:
    value: float


AngleSource = Union[Feature, Param, Const]


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    source: AngleSource | None = None

    def validate(self, n_qubits: int) -> None:
        if self.kind not in GATE_KINDS:
            raise GateError(f"unknown gate kind {self.kind!r}")
        if not 0 <= self.target < n_qubits:
            raise GateError(f"target qubit {self.target} out of range for {n_qubits} qubits")
        if self.kind == "CZ":
            if self.control is None or not 0 <= self.control < n_qubits:
                raise GateError(f"CZ control qubit {self.control} out of range")
            if self.control == self.target:
                raise GateError("CZ control and target must differ")
            if self.source is not None:
                raise GateError("CZ takes no angle")
        elif self.source is None:
            raise GateError(f"{self.kind} needs an angle source")


@dataclass(frozen=True)
class Observable:
    """Weighted sum of diagonal Pauli strings, e.g. ``[("ZZII", 1.0)]``.

    Character ``k`` of each string acts on qubit ``k``.
    """

    terms: tuple[tuple[str, float], ...]
    n_qubits: int = field(init=False)

    def __init__(self, terms: Sequence[tuple[str, float]]):
        terms = tuple((str(p).upper(), float(c)) for p, c in terms)
        if not terms:
            raise ValueError("observable needs at least one term")
        n = len(terms[0][0])
        for pauli, _ in terms:
            if len(pauli) != n:
                raise ValueError("all Pauli strings must have the same length")
            if set(pauli) - {"I", "Z"}:
                raise ValueError(f"only I/Z strings are supported, got {pauli!r}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "n_qubits", n)

    @classmethod
    def zz(cls, i: int, j: int, n_qubits: int, coeff: float = 1.0) -> "Observable":
        chars = ["I"] * n_qubits
        chars[i] = chars[j] = "Z"
        return cls([("".join(chars), coeff)])

    def __add__(self, other: "Observable") -> "Observable":
        return Observable(self.terms + other.terms)

    def diagonal(self) -> np.ndarray:
        """Eigenvalue of the observable on each computational basis state."""
        out = np.zeros(2**self.n_qubits)
        for pauli, coeff in self.terms:
            out += coeff * pauli_diagonal(pauli)
        return out


@lru_cache(maxsize=None)
def pauli_diagonal(pauli: str) -> np.ndarray:
    n = len(pauli)
    idx = np.arange(2**n)
    sign = np.ones(2**n)
    for q, p in enumerate(pauli):
        if p == "Z":
            bit = (idx >> (n - 1 - q)) & 1
            sign *= 1 - 2 * bit
    sign.setflags(write=False)
    return sign


@lru_cache(maxsize=None)
def _cz_sign(n: int, a: int, b: int) -> np.ndarray:
    idx = np.arange(2**n)
    both = ((idx >> (n - 1 - a)) & 1) & ((idx >> (n - 1 - b)) & 1)
    sign = (1 - 2 * both).astype(np.float64)
    sign.setflags(write=False)
    return sign


def zero_state(n_qubits: int = 4, batch: tuple[int, ...] = ()) -> np.ndarray:
    psi = np.zeros(batch + (2**n_qubits,), dtype=np.complex128)
    psi[..., 0] = 1.0
    return psi


def basis_state(bits: str) -> np.ndarray:
    psi = np.zeros(2 ** len(bits), dtype=np.complex128)
    psi[int(bits, 2)] = 1.0
    return psi


def _n_qubits(psi: np.ndarray) -> int:
    dim = psi.shape[-1]
    n = dim.bit_length() - 1
    if dim != 2**n or n < 1:
        raise ValueError(f"state length {dim} is not a power of two")
    return n


def _rotate(flat: np.ndarray, kind: str, q: int, n: int, c: np.ndarray, s: np.ndarray) -> None:
    """In-place rotation on a (B, 2**n) array; c, s are cos/sin of half angles, shape (B,)."""
    view = flat.reshape(flat.shape[0], 2**q, 2, 2 ** (n - q - 1))
    a0 = view[:, :, 0, :]
    a1 = view[:, :, 1, :]
    c = c[:, None, None]
    s = s[:, None, None]
    if kind == "RZ":
        phase = c - 1j * s
        a0 *= phase
        a1 *= phase.conj()
        return
    t0 = a0.copy()
    if kind == "RX":
        a0 *= c
        a0 -= 1j * s * a1
        a1 *= c
        a1 -= 1j * s * t0
    else:  # RY
        a0 *= c
        a0 -= s * a1
        a1 *= c
        a1 += s * t0


def apply_gate(state: np.ndarray, gate: Gate, angle: float | np.ndarray = 0.0) -> np.ndarray:
    """Return ``gate`` applied to ``state``; ``angle`` may be batched like the state."""
    n = _n_qubits(state)
    gate.validate(n)
    batch = state.shape[:-1]
    flat = np.array(state, dtype=np.complex128).reshape(-1, 2**n)
    if gate.kind == "CZ":
        flat *= _cz_sign(n, gate.control, gate.target)
        return flat.reshape(state.shape)
    angle = np.broadcast_to(np.asarray(angle, dtype=float), batch).reshape(-1)
    if not np.all(np.isfinite(angle)):
        raise GateError("rotation angle must be finite")
    _rotate(flat, gate.kind, gate.target, n, np.cos(angle / 2), np.sin(angle / 2))
    return flat.reshape(state.shape)


_KIND_CODE = {"RX": 0, "RY": 1, "RZ": 2, "CZ": 3}


@njit(cache=True)
def _run_kernel(kinds, targets, controls, srcs, cols, n, fcos, fsin, pcos, psin, out):
    dim = 1 << n
    re = np.empty(dim)
    im = np.empty(dim)
    fstep = 1 if fcos.shape[0] > 1 else 0
    pstep = 1 if pcos.shape[0] > 1 else 0
    for b in range(out.shape[0]):
        fb = b * fstep
        pb = b * pstep
        re[:] = 0.0
        im[:] = 0.0
        re[0] = 1.0
        for k in range(kinds.shape[0]):
            kind = kinds[k]
            tmask = 1 << (n - 1 - targets[k])
            if kind == 3:
                cmask = 1 << (n - 1 - controls[k])
                for i in range(dim):
                    if (i & tmask) and (i & cmask):
                        re[i] = -re[i]
                        im[i] = -im[i]
                continue
            if srcs[k] == 0:
                c = fcos[fb, cols[k]]
                s = fsin[fb, cols[k]]
            else:
                c = pcos[pb, cols[k]]
                s = psin[pb, cols[k]]
            for i in range(dim):
                if i & tmask:
                    continue
                j = i | tmask
                r0 = re[i]
                i0 = im[i]
                r1 = re[j]
                i1 = im[j]
                if kind == 0:
                    # [[c, -is], [-is, c]]
                    re[i] = c * r0 + s * i1
                    im[i] = c * i0 - s * r1
                    re[j] = c * r1 + s * i0
                    im[j] = c * i1 - s * r0
                elif kind == 1:
                    # [[c, -s], [s, c]]
                    re[i] = c * r0 - s * r1
                    im[i] = c * i0 - s * i1
                    re[j] = s * r0 + c * r1
                    im[j] = s * i0 + c * i1
                else:
                    # diag(c - is, c + is)
                    re[i] = c * r0 + s * i0
                    im[i] = c * i0 - s * r0
                    re[j] = c * r1 - s * i1
                    im[j] = c * i1 + s * r1
        for i in range(dim):
            out[b, i] = complex(re[i], im[i])


class _Program:
    """Gate list lowered to integer codes for the compiled kernel.

    Constant angles are appended as extra parameter columns.
    """

    def __init__(self, gates: Sequence[Gate], n_qubits: int, n_features: int, n_params: int):
        self.n = n_qubits
        self.n_params = n_params
        kinds, targets, controls, srcs, cols = [], [], [], [], []
        self.consts: list[float] = []
        for g in gates:
            g.validate(n_qubits)
            kinds.append(_KIND_CODE[g.kind])
            targets.append(g.target)
            controls.append(g.control if g.control is not None else -1)
            src = g.source
            if g.kind == "CZ":
                srcs.append(-1)
                cols.append(-1)
            elif isinstance(src, Feature):
                if not 0 <= src.index < n_features:
                    raise GateError(f"feature index {src.index} out of range")
                srcs.append(0)
                cols.append(src.index)
            elif isinstance(src, Param):
                if not 0 <= src.index < n_params:
                    raise GateError(f"parameter index {src.index} out of range")
                srcs.append(1)
                cols.append(src.index)
            elif isinstance(src, Const):
                srcs.append(1)
                cols.append(n_params + len(self.consts))
                self.consts.append(float(src.value))
            else:
                raise GateError(f"bad angle source {src!r}")
        as_int = lambda v: np.array(v, dtype=np.int64)
        self.kinds, self.targets, self.controls = as_int(kinds), as_int(targets), as_int(controls)
        self.srcs, self.cols = as_int(srcs), as_int(cols)

    def run(self, inputs: np.ndarray, params: np.ndarray, batch: int) -> np.ndarray:
        if self.consts:
            extra = np.broadcast_to(np.array(self.consts), (len(params), len(self.consts)))
            params = np.concatenate([params, extra], axis=1)
        fhalf = 0.5 * inputs
        phalf = 0.5 * params
        if fhalf.shape[1] == 0:
            fhalf = np.zeros((1, 1))
        if phalf.shape[1] == 0:
            phalf = np.zeros((1, 1))
        out = np.empty((batch, 2**self.n), dtype=np.complex128)
        _run_kernel(self.kinds, self.targets, self.controls, self.srcs, self.cols, self.n,
                    np.cos(fhalf), np.sin(fhalf), np.cos(phalf), np.sin(phalf), out)
        return out


_PROGRAMS: dict[int, tuple[object, _Program]] = {}


def _program_for(template) -> _Program:
    key = id(template)
    hit = _PROGRAMS.get(key)
    if hit is not None and hit[0] is template:
        return hit[1]
    prog = _Program(template.gates, template.n_qubits, template.n_features, template.n_params)
    _PROGRAMS[key] = (template, prog)
    return prog


def run_circuit(template, inputs, params) -> np.ndarray:
    """Simulate ``template`` from ``|0...0>``.

    ``inputs`` has shape (F,) or (B, F) and ``params`` (P,) or (B, P); a
    batched argument broadcasts against an unbatched one. Returns shape
    (2**n,) when neither is batched, else (B, 2**n).
    """
    x = np.asarray(inputs, dtype=float)
    p = np.asarray(params, dtype=float)
    if x.shape[-1:] != (template.n_features,) and not (template.n_features == 0 and x.size == 0):
        raise BindingError(f"expected {template.n_features} inputs, got shape {x.shape}")
    if p.shape[-1:] != (template.n_params,) and not (template.n_params == 0 and p.size == 0):
        raise BindingError(f"expected {template.n_params} parameters, got shape {p.shape}")
    if x.ndim > 2 or p.ndim > 2:
        raise BindingError("inputs and params must be at most 2-D")
    single = x.ndim <= 1 and p.ndim <= 1
    x2 = x.reshape(-1, template.n_features) if x.size else np.zeros((1, 0))
    p2 = p.reshape(-1, template.n_params) if p.size else np.zeros((1, 0))
    if len(x2) != len(p2) and 1 not in (len(x2), len(p2)):
        raise BindingError(f"batch sizes {len(x2)} and {len(p2)} do not broadcast")
    batch = max(len(x2), len(p2))
    psi = _program_for(template).run(x2, p2, batch)
    return psi[0] if single else psi


def probabilities(state: np.ndarray) -> np.ndarray:
    return state.real**2 + state.imag**2


def expectation(state: np.ndarray, obs: Observable) -> float | np.ndarray:
    """Exact expectation of a diagonal observable; batched over leading axes."""
    probs = probabilities(state)
    total = 0.0
    for pauli, coeff in obs.terms:
        total = total + coeff * (probs @ pauli_diagonal(pauli))
    return total


def sample_expectation(
    state: np.ndarray, obs: Observable, shots: int, rng: np.random.Generator
) -> float | np.ndarray:
    """Finite-shot estimate of ``expectation`` from computational-basis samples."""
    if int(shots) != shots or shots < 1:
        raise ValueError(f"shots must be a positive integer, got {shots!r}")
    probs = probabilities(state)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    counts = rng.multinomial(int(shots), probs)
    total = 0.0
    for pauli, coeff in obs.terms:
        total = total + coeff * (counts @ pauli_diagonal(pauli))
    return total / shots


def sample_expectations(
    state: np.ndarray, observables: Sequence[Observable], shots: int, rng: np.random.Generator
) -> np.ndarray:
    """Estimate several observables from one set of basis samples; shape (..., A)."""
    if int(shots) != shots or shots < 1:
        raise ValueError(f"shots must be a positive integer, got {shots!r}")
    probs = probabilities(state)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    counts = rng.multinomial(int(shots), probs)
    return np.stack([counts @ o.diagonal() for o in observables], axis=-1) / shots
