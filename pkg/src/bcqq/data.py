"""Offline transition buffers: collection, sampling and file formats.

Binary layout (all little-endian)::

    offset 0   magic      b"BCQB"
    offset 4   version    u16
    offset 6   meta_len   u32
    offset 10  metadata   meta_len bytes of UTF-8 "key=value" lines
    ...        count      u64
    ...        records    count x 75 bytes: s f64[4], a u8, r f64, sp f64[4], done u8, truncated u8

Observations are stored already normalized; ``bounds`` in the metadata
records the clip bounds used.
"""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np

from . import env
from .rng import make_rng

MAGIC = b"BCQB"
VERSION = 1
ENV_ID = "CartPole-v1"
RECORD = np.dtype(
    [
        ("s", "<f8", (4,)),
        ("a", "u1"),
        ("r", "<f8"),
        ("sp", "<f8", (4,)),
        ("done", "u1"),
        ("truncated", "u1"),
    ]
)
CSV_HEADER = ["s0", "s1", "s2", "s3", "a", "r", "sp0", "sp1", "sp2", "sp3", "done"]


class BufferFormatError(ValueError):
    def __init__(self, offset: int, field_name: str, message: str):
        super().__init__(f"offset {offset}, field {field_name}: {message}")
        self.offset = offset
        self.field = field_name


class BoundsMismatchWarning(UserWarning):
    pass


class Transition(NamedTuple):
    s: np.ndarray
    a: int
    r: float
    sp: np.ndarray
    done: bool


@dataclass
class Buffer:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    sp: np.ndarray
    done: np.ndarray
    truncated: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float).reshape(-1, 4)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=float)
        self.sp = np.asarray(self.sp, dtype=float).reshape(-1, 4)
        self.done = np.asarray(self.done, dtype=bool)
        self.truncated = np.asarray(self.truncated, dtype=bool)
        n = len(self.s)
        if not all(len(v) == n for v in (self.a, self.r, self.sp, self.done, self.truncated)):
            raise ValueError("all transition fields must have the same length")
        self.meta = {str(k): str(v) for k, v in self.meta.items()}
        self.meta["size"] = str(n)

    def __len__(self) -> int:
        return len(self.s)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.s[i], int(self.a[i]), float(self.r[i]), self.sp[i], bool(self.done[i]))

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))

    @property
    def terminal(self) -> np.ndarray:
        """Transitions that ended in environment failure rather than a time limit."""
        return self.done & ~self.truncated

    @property
    def bounds(self) -> tuple[float, ...]:
        return parse_bounds(self.meta.get("bounds", ""))

    def take(self, idx) -> "Buffer":
        idx = np.asarray(idx)
        return Buffer(
            self.s[idx], self.a[idx], self.r[idx], self.sp[idx], self.done[idx],
            self.truncated[idx], dict(self.meta),
        )

    def episode_lengths(self) -> list[int]:
        """Trajectory lengths delimited by ``done``; a trailing partial episode counts too."""
        ends = np.flatnonzero(self.done)
        lengths = np.diff(np.concatenate([[-1], ends])).tolist()
        tail = len(self) - (ends[-1] + 1 if len(ends) else 0)
        return lengths + ([tail] if tail else [])


def format_bounds(bounds) -> str:
    return ",".join(repr(float(b)) for b in bounds)


def parse_bounds(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",")) if text else ()


def _collect(
    n: int, seed: int, choose: Callable[[np.ndarray, np.random.Generator], int], bounds, meta: dict
) -> Buffer:
    if n < 1:
        raise ValueError(f"need at least one transition, got n={n}")
    env_rng = make_rng(seed, "env")
    act_rng = make_rng(seed, "policy")
    raw_s = np.empty((n, 4))
    raw_sp = np.empty((n, 4))
    actions = np.empty(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    truncated = np.zeros(n, dtype=bool)
    state = env.reset(env_rng)
    for i in range(n):
        a = choose(env.normalize(state.obs, bounds), act_rng)
        nxt, _, ended = env.step(state, a)
        raw_s[i], raw_sp[i], actions[i] = state.obs, nxt.obs, a
        done[i], truncated[i] = ended, nxt.truncated
        state = env.reset(env_rng) if ended else nxt
    meta = {"env": ENV_ID, "seed": seed, "bounds": format_bounds(bounds), **meta}
    return Buffer(
        env.normalize(raw_s, bounds), actions, np.ones(n), env.normalize(raw_sp, bounds),
        done, truncated, meta,
    )


def collect_random(n: int, seed: int, bounds=env.DEFAULT_BOUNDS) -> Buffer:
    """``n`` transitions from a uniformly random policy, restarting finished episodes."""
    return _collect(n, seed, lambda s, rng: int(rng.integers(2)), bounds, {"policy": "random"})


def collect_noisy_expert(
    n: int, expert: Callable[[np.ndarray], int], eps: float = 0.1, seed: int = 0,
    bounds=env.DEFAULT_BOUNDS,
) -> Buffer:
    """Expert actions, replaced by a uniform action with probability ``eps``.

    ``expert`` receives the normalized observation.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")

    def choose(s, rng):
        # two draws every step so the stream does not depend on eps
        explore = rng.random() < eps
        random_action = int(rng.integers(2))
        return random_action if explore else int(expert(s))

    return _collect(n, seed, choose, bounds, {"policy": "noisy-expert", "epsilon": repr(float(eps))})


def sample_minibatch(buffer: Buffer, size: int, rng: np.random.Generator) -> Buffer:
    """Uniform sampling with replacement."""
    if len(buffer) == 0:
        raise ValueError("cannot sample from an empty buffer")
    if size < 1:
        raise ValueError(f"minibatch size must be positive, got {size}")
    return buffer.take(rng.integers(0, len(buffer), size=size))


def _encode_meta(meta: dict) -> bytes:
    lines = []
    for key in sorted(meta):
        value = str(meta[key])
        if "\n" in value or "=" in key:
            raise ValueError(f"metadata entry {key!r} cannot be serialized")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def save_buffer(buffer: Buffer, path) -> None:
    records = np.zeros(len(buffer), dtype=RECORD)
    records["s"], records["a"], records["r"] = buffer.s, buffer.a, buffer.r
    records["sp"], records["done"], records["truncated"] = buffer.sp, buffer.done, buffer.truncated
    meta = _encode_meta(buffer.meta)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<Q", len(buffer)))
        fh.write(records.tobytes())


def load_buffer(path, expected_bounds=None) -> Buffer:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BufferFormatError(0, "magic", "not a buffer file")
    if len(data) < 10:
        raise BufferFormatError(4, "header", "truncated header")
    version, meta_len = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise BufferFormatError(4, "version", f"unsupported version {version}")
    pos = 10
    if len(data) < pos + meta_len:
        raise BufferFormatError(pos, "metadata", f"expected {meta_len} bytes")
    try:
        text = data[pos : pos + meta_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BufferFormatError(pos + exc.start, "metadata", "invalid UTF-8") from None
    meta = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise BufferFormatError(pos, "metadata", f"malformed line {line!r}")
        meta[key] = value
    pos += meta_len
    if len(data) < pos + 8:
        raise BufferFormatError(pos, "count", "truncated record count")
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    available = (len(data) - pos) // RECORD.itemsize
    if available < count:
        raise BufferFormatError(
            pos + available * RECORD.itemsize, f"records[{available}]",
            f"file holds {available} of {count} records",
        )
    if len(data) != pos + count * RECORD.itemsize:
        raise BufferFormatError(pos + count * RECORD.itemsize, "records", "trailing bytes")
    rec = np.frombuffer(data, dtype=RECORD, count=count, offset=pos)
    for name in ("a", "done", "truncated"):
        bad = np.flatnonzero(rec[name] > 1)
        if bad.size:
            off = pos + bad[0] * RECORD.itemsize + RECORD.fields[name][1]
            raise BufferFormatError(off, f"records[{bad[0]}].{name}", f"value {rec[name][bad[0]]}")
    if "size" in meta and int(meta["size"]) != count:
        raise BufferFormatError(10, "metadata.size", f"says {meta['size']}, file has {count}")
    buf = Buffer(rec["s"], rec["a"], rec["r"], rec["sp"], rec["done"], rec["truncated"], meta)
    if expected_bounds is not None:
        for msg in bounds_mismatch(buf, expected_bounds):
            warnings.warn(msg, BoundsMismatchWarning, stacklevel=2)
    return buf


def bounds_mismatch(buffer: Buffer, bounds) -> list[str]:
    stored = buffer.bounds
    expected = tuple(float(b) for b in bounds)
    if stored != expected:
        return [f"buffer normalized with bounds {stored}, config expects {expected}"]
    return []


def export_csv(buffer: Buffer, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for t in buffer:
            writer.writerow(
                [repr(float(v)) for v in t.s] + [t.a, repr(t.r)]
                + [repr(float(v)) for v in t.sp] + [int(t.done)]
            )
