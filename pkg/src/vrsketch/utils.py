from __future__ import annotations

import dataclasses
import typing


class ConfigError(ValueError):
    """A configuration is malformed or inconsistent."""


def dataclass_from_dict(cls, data: dict | None, where: str = ""):
    """Instantiate ``cls`` from ``data``, rejecting unknown keys."""
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or cls.__name__}: {', '.join(unknown)}")
    hints = typing.get_type_hints(cls)
    for key, value in data.items():
        if isinstance(value, list) and "tuple" in str(hints.get(key, "")):
            data[key] = tuple(value)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or cls.__name__}: {exc}") from exc


def to_plain(obj):
    """Dataclasses, tuples and paths to JSON/YAML-friendly builtins."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if hasattr(obj, "__fspath__"):
        return str(obj)
    return obj
