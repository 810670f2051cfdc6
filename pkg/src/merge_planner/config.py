"""Flat dotted-key scenario files.

One ``section.key = value`` assignment per line; ``#`` starts a comment,
lists are comma separated.  Keys map onto the nested ScenarioConfig
dataclasses, unknown keys are rejected, and every diagnostic names the key
and line it came from.
"""
from __future__ import annotations

import dataclasses
import enum
import typing
from importlib import resources
from pathlib import Path

from .sim import ConfigError, ScenarioConfig

BUNDLED = "table1_table2.cfg"

# nested fields without a dataclass default that a file may still omit
OPTIONAL = {
    "ev.initial.phi": 0.0,
    "ev.initial.a": 0.0,
}


class ConfigFileError(ConfigError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.key = key
        self.line = line


def _hints(cls):
    return typing.get_type_hints(cls)


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _leaf_keys(cls, prefix=""):
    """Yield ``(dotted_key, type, default)`` for every scalar field."""
    hints = _hints(cls)
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        tp = hints[f.name]
        key = f"{prefix}{f.name}"
        if _is_dataclass_type(tp):
            yield from _leaf_keys(tp, key + ".")
        else:
            yield key, tp, f


def known_keys() -> list:
    return [k for k, _, _ in _leaf_keys(ScenarioConfig)]


def _parse_value(raw: str, tp, key: str, line: int):
    try:
        if tp is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true or false, got {raw!r}")
            return low == "true"
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is tuple:
            return tuple(float(x) for x in raw.split(","))
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(raw)
        if tp is str:
            return raw
    except ValueError as exc:
        raise ConfigFileError(f"invalid value {raw!r} ({exc})", key, line) from None
    raise ConfigFileError(f"unsupported field type {tp!r}", key, line)


def parse_text(text: str) -> dict:
    """Dotted key -> (raw value, line number); duplicate keys are errors."""
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigFileError(f"expected 'key = value', got {body!r}", line=n)
        key, raw = (s.strip() for s in body.split("=", 1))
        if not key or not raw:
            raise ConfigFileError("empty key or value", key or None, n)
        if key in out:
            raise ConfigFileError(f"duplicate key (first set on line {out[key][1]})", key, n)
        out[key] = (raw, n)
    return out


def _build(cls, entries: dict, prefix: str, used: set):
    hints = _hints(cls)
    kwargs = {}
    lines = {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        tp = hints[f.name]
        key = f"{prefix}{f.name}"
        if _is_dataclass_type(tp):
            sub_present = any(k.startswith(key + ".") for k in entries)
            has_default = (f.default is not dataclasses.MISSING
                           or f.default_factory is not dataclasses.MISSING)
            if sub_present or not has_default:
                kwargs[f.name] = _build(tp, entries, key + ".", used)
            continue
        if key in entries:
            raw, n = entries[key]
            used.add(key)
            kwargs[f.name] = _parse_value(raw, tp, key, n)
            lines[f.name] = n
        elif key in OPTIONAL:
            kwargs[f.name] = OPTIONAL[key]
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigFileError("missing required key", key)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        name = next((k for k in lines if k in str(exc)), None)
        if name is None and lines:
            name = next(iter(lines))
        key = f"{prefix}{name}" if name else prefix.rstrip(".") or None
        raise ConfigFileError(str(exc), key, lines.get(name)) from None


def loads(text: str) -> ScenarioConfig:
    entries = parse_text(text)
    known = set(known_keys())
    for key, (_, n) in entries.items():
        if key not in known:
            raise ConfigFileError("unknown key", key, n)
    used = set()
    return _build(ScenarioConfig, entries, "", used)


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(f"cannot read config file {p}: {exc.strerror}") from None
    return loads(text)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(config: ScenarioConfig) -> str:
    lines = []
    section = None
    for key, _, _ in _leaf_keys(ScenarioConfig):
        obj = config
        for part in key.split("."):
            obj = getattr(obj, part)
        head = key.split(".", 1)[0]
        if head != section:
            if section is not None:
                lines.append("")
            section = head
        lines.append(f"{key} = {_format(obj)}")
    return "\n".join(lines) + "\n"


def dump_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(dumps(config), encoding="utf-8")


def bundled_path() -> Path:
    return Path(str(resources.files("merge_planner") / "data" / BUNDLED))


def load_bundled() -> ScenarioConfig:
    return load_config(bundled_path())
