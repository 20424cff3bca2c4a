"""Model checkpoints: a versioned little-endian binary file plus a JSON export.

Layout::

    offset 0   magic      b"BCQK"
    offset 4   version    u16
    offset 6   meta_len   u32
    offset 10  metadata   UTF-8 "key=value" lines
    ...        n_arrays   u32
    ...        per array: name_len u16, name (UTF-8), count u64, count x f64

Quantum models store ``theta`` and ``w`` plus the template recipe
(strategy, layers, qubits); MLPs store their layer sizes and the flat
parameter vector in ``get_flat`` order (row-major weights, then biases, per
layer). Optimizer moments are optional extra arrays.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .ansatz import QModel, build_template, default_observables
from .bcq import MlpApprox, QuantumApprox
from .mlp import MlpModel, init_mlp
from .optim import OptimizerState

MAGIC = b"BCQK"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, offset: int, field_name: str, message: str):
        super().__init__(f"offset {offset}, field {field_name}: {message}")
        self.offset = offset
        self.field = field_name


def _model_entries(prefix: str, approx) -> tuple[dict, dict]:
    meta, arrays = {}, {}
    if isinstance(approx, QuantumApprox):
        t = approx.model.template
        meta[f"{prefix}.kind"] = "quantum"
        meta[f"{prefix}.strategy"] = t.strategy
        meta[f"{prefix}.layers"] = str(t.layers)
        meta[f"{prefix}.qubits"] = str(t.n_qubits)
        arrays[f"{prefix}.theta"] = approx.model.theta
        arrays[f"{prefix}.w"] = approx.model.w
    elif isinstance(approx, MlpApprox):
        meta[f"{prefix}.kind"] = "classical"
        meta[f"{prefix}.sizes"] = ",".join(str(s) for s in approx.model.sizes)
        arrays[f"{prefix}.params"] = approx.model.get_flat()
    else:
        raise TypeError(f"cannot checkpoint {type(approx).__name__}")
    return meta, arrays


def _opt_entries(prefix: str, state: OptimizerState) -> tuple[dict, dict]:
    meta = {
        f"{prefix}.variant": state.variant,
        f"{prefix}.t": str(state.t),
        f"{prefix}.betas": f"{state.beta1!r},{state.beta2!r},{state.eps!r}",
    }
    arrays = {f"{prefix}.m": state.m, f"{prefix}.v": state.v, f"{prefix}.vhat": state.vhat}
    return meta, arrays


def save_checkpoint(path, q, gen, meta: dict | None = None, q_opt=None, gen_opt=None) -> None:
    all_meta = {str(k): str(v) for k, v in (meta or {}).items()}
    arrays: dict[str, np.ndarray] = {}
    for prefix, approx in (("q", q), ("gen", gen)):
        m, a = _model_entries(prefix, approx)
        all_meta.update(m)
        arrays.update(a)
    for prefix, state in (("q_opt", q_opt), ("gen_opt", gen_opt)):
        if state is not None:
            m, a = _opt_entries(prefix, state)
            all_meta.update(m)
            arrays.update(a)
    text = "".join(f"{k}={all_meta[k]}\n" for k in sorted(all_meta))
    if any("\n" in v for v in all_meta.values()):
        raise ValueError("metadata values must be single-line")
    blob = text.encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(blob)), blob, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        parts += [struct.pack("<H", len(encoded)), encoded, struct.pack("<Q", data.size), data.tobytes()]
    Path(path).write_bytes(b"".join(parts))


def _read_raw(path) -> tuple[dict, dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(0, "magic", "not a checkpoint file")
    if len(data) < 10:
        raise CheckpointError(4, "header", "truncated header")
    version, meta_len = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(4, "version", f"unsupported version {version}")
    pos = 10
    if len(data) < pos + meta_len + 4:
        raise CheckpointError(pos, "metadata", "truncated metadata")
    meta = {}
    for line in data[pos : pos + meta_len].decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(pos, "metadata", f"malformed line {line!r}")
        meta[key] = value
    pos += meta_len
    (n_arrays,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for i in range(n_arrays):
        if len(data) < pos + 2:
            raise CheckpointError(pos, f"arrays[{i}].name", "truncated")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if len(data) < pos + 8:
            raise CheckpointError(pos, f"{name}.count", "truncated")
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if len(data) < pos + 8 * count:
            raise CheckpointError(pos, name, f"expected {count} doubles")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(float)
        pos += 8 * count
    if pos != len(data):
        raise CheckpointError(pos, "trailer", "unexpected trailing bytes")
    return meta, arrays


def _build_model(prefix: str, meta: dict, arrays: dict):
    kind = meta.get(f"{prefix}.kind")
    if kind == "quantum":
        template = build_template(
            meta[f"{prefix}.strategy"], int(meta[f"{prefix}.layers"]), int(meta[f"{prefix}.qubits"])
        )
        w = arrays[f"{prefix}.w"]
        return QuantumApprox(
            QModel(template, arrays[f"{prefix}.theta"], w, default_observables(template.n_qubits, len(w)))
        )
    if kind == "classical":
        sizes = tuple(int(s) for s in meta[f"{prefix}.sizes"].split(","))
        model: MlpModel = init_mlp(sizes, np.random.default_rng(0))
        model.set_flat(arrays[f"{prefix}.params"])
        return MlpApprox(model)
    raise CheckpointError(10, f"metadata.{prefix}.kind", f"unknown model kind {kind!r}")


def _build_opt(prefix: str, meta: dict, arrays: dict):
    if f"{prefix}.variant" not in meta:
        return None
    b1, b2, eps = (float(v) for v in meta[f"{prefix}.betas"].split(","))
    m = arrays[f"{prefix}.m"]
    return OptimizerState(
        len(m), meta[f"{prefix}.variant"], b1, b2, eps, int(meta[f"{prefix}.t"]),
        m, arrays[f"{prefix}.v"], arrays[f"{prefix}.vhat"],
    )


def load_checkpoint(path) -> dict:
    """Returns ``{"q", "gen", "q_opt", "gen_opt", "meta"}``; optimizer entries may be None."""
    meta, arrays = _read_raw(path)
    return {
        "q": _build_model("q", meta, arrays),
        "gen": _build_model("gen", meta, arrays),
        "q_opt": _build_opt("q_opt", meta, arrays),
        "gen_opt": _build_opt("gen_opt", meta, arrays),
        "meta": meta,
    }


def export_json(path_in, path_out) -> None:
    """Human-readable dump of a checkpoint (floats written with full precision)."""
    meta, arrays = _read_raw(path_in)
    out = {"version": VERSION, "meta": meta, "arrays": {k: v.tolist() for k, v in arrays.items()}}
    Path(path_out).write_text(json.dumps(out, indent=1, sort_keys=True), encoding="utf-8")
