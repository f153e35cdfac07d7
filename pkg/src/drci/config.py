"""Flat ``key = value`` run files.

One file describes a whole run: optimisation, synthetic data, crops, loss,
network, tracker and the held-out benchmark. Nested settings take a dotted
prefix::

    # comments run to end of line
    steps = 1500
    net.embed_dim = 128
    gen.background_levels = 0.2, 0.8
    loss.focal_alpha = none
    track.window_weight = 0.3
    bench.gen.speed = 1.0

Unknown keys, repeated keys and values of the wrong type are rejected with
the line number. Keys left out keep their defaults.
"""

from __future__ import annotations

import math
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

from .tracker import TrackConfig
from .trainer import EvalBenchConfig, TrainConfig

# set from the command line, or superseded by another key
_SKIP = {"out_dir", "loss.rho"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    bench: EvalBenchConfig = field(default_factory=EvalBenchConfig)


def _prefix(name: str) -> str:
    return name[:-4] if name.endswith("_cfg") else name


def _key(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _walk(obj, prefix: str = ""):
    """Yield ``(key, type, value)`` for every leaf field of a dataclass tree."""
    hints = typing.get_type_hints(type(obj))
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            # the training config sits at the top level, without a prefix
            sub = "" if (obj.__class__ is RunConfig and f.name == "train") else _key(prefix, _prefix(f.name))
            yield from _walk(value, sub)
        else:
            key = _key(prefix, f.name)
            if key not in _SKIP:
                yield key, hints[f.name], value


def schema(cfg: RunConfig | None = None) -> dict[str, tuple[Any, Any]]:
    """``key -> (type, current value)``."""
    return {k: (tp, v) for k, tp, v in _walk(cfg or RunConfig())}


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: RunConfig | None = None) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, (_, v) in schema(cfg).items())


def _is_optional(tp) -> tuple[bool, Any]:
    args = typing.get_args(tp)
    if typing.get_origin(tp) in (typing.Union, types.UnionType) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return True, rest[0]
    return False, tp


def parse_value(text: str, tp):
    text = text.strip()
    optional, tp = _is_optional(tp)
    if optional and text.lower() == "none":
        return None
    if typing.get_origin(tp) is tuple:
        args = typing.get_args(tp)
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        if len(args) == 2 and args[1] is Ellipsis:
            if not parts:
                raise ValueError("expected at least one value")
            return tuple(parse_value(p, args[0]) for p in parts)
        if len(parts) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values")
        return tuple(parse_value(p, a) for p, a in zip(parts, args))
    if tp is bool:
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if tp is int:
        return int(text)
    if tp is float:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value
    if tp is str:
        return text
    raise TypeError(f"unsupported config type {tp}")


def parse(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse file contents into ``{key: typed value}`` without building configs."""
    known = schema()
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{where}: {key!r} set twice")
        try:
            out[key] = parse_value(value, known[key][0])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
    return out


def _build(obj, values: dict[str, Any], prefix: str = ""):
    changes = {}
    for f in fields(obj):
        current = getattr(obj, f.name)
        if is_dataclass(current):
            sub = "" if (obj.__class__ is RunConfig and f.name == "train") else _key(prefix, _prefix(f.name))
            changes[f.name] = _build(current, values, sub)
        elif _key(prefix, f.name) in values:
            changes[f.name] = values[_key(prefix, f.name)]
    return replace(obj, **changes)


def build(values: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    """Apply parsed values to ``base``; dataclass validation errors become ConfigErrors."""
    try:
        return _build(base or RunConfig(), values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return build(parse(text, str(path)))


def save(path, cfg: RunConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cfg))
    return path


__all__ = ["ConfigError", "RunConfig", "build", "dumps", "load", "parse", "parse_value", "save", "schema"]
