"""Experiment config files.

Grammar (UTF-8 text)::

    file    := line*
    line    := [entry] [comment] newline
    entry   := key "=" value
    key     := [A-Za-z_][A-Za-z0-9_-]*      (dashes are read as underscores)
    value   := any characters except "#", surrounding blanks stripped, non-empty
    comment := "#" any characters

Keys are ``TrainConfig`` field names. Duplicate or unknown keys are errors.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import fields
from typing import Mapping

from .bcq import TrainConfig

KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_-]*")
TRUE = {"on", "true", "yes", "1"}
FALSE = {"off", "false", "no", "0"}


class ConfigError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(number, f"expected key = value, got {raw!r}")
        if not KEY_RE.fullmatch(key):
            raise ConfigError(number, f"invalid key {key!r}")
        if not value:
            raise ConfigError(number, f"empty value for {key!r}")
        key = key.replace("-", "_")
        if key in out:
            raise ConfigError(number, f"duplicate key {key!r}")
        out[key] = value
    return out


def _convert(name: str, value: str, default):
    if name == "shots":
        return None if value.lower() in ("exact", "none") else int(value)
    if name == "bounds":
        return tuple(float(v) for v in value.split(","))
    if isinstance(default, bool):
        low = value.lower()
        if low in TRUE:
            return True
        if low in FALSE:
            return False
        raise ValueError(f"expected on/off for {name}, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def build_config(values: Mapping[str, str], line_of: Mapping[str, int] | None = None) -> TrainConfig:
    """TrainConfig from string values; unknown keys and bad values raise ConfigError."""
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError((line_of or {}).get(key, 0), f"unknown key {key!r}")
        try:
            kwargs[key] = _convert(key, str(value), getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError((line_of or {}).get(key, 0), f"bad value for {key}: {exc}") from None
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(0, str(exc)) from None


def canonical_text(config: TrainConfig) -> str:
    """Sorted ``key=value`` lines that re-parse to the same config."""
    lines = []
    for f in sorted(fields(TrainConfig), key=lambda f: f.name):
        v = getattr(config, f.name)
        if f.name == "shots":
            text = "exact" if v is None else str(v)
        elif f.name == "bounds":
            text = ",".join(repr(float(b)) for b in v)
        elif isinstance(v, bool):
            text = "on" if v else "off"
        else:
            text = repr(v) if isinstance(v, float) else str(v)
        lines.append(f"{f.name}={text}\n")
    return "".join(lines)


def spec_hash(config: TrainConfig, extra: str = "") -> str:
    """Short digest identifying an experiment (config plus e.g. the buffer digest)."""
    h = hashlib.sha256(canonical_text(config).encode("utf-8"))
    h.update(extra.encode("utf-8"))
    return h.hexdigest()[:16]
