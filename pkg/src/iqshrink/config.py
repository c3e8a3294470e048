"""Flat ``key = value`` config files.

Lines are ``key = value``; ``#`` starts a comment.  Values are read as JSON
when possible (numbers, ``[1, 2]``, ``"text"``) and as bare strings
otherwise; list-valued fields also accept comma-separated items.  Grid files
add ``[name]`` section headers: keys before the first header are shared by
every section.  Every key must name a field of one of the allowed config
types; anything else is an error.
"""
from __future__ import annotations

import json
from dataclasses import MISSING, fields
from pathlib import Path

from .errors import ConfigError
from .model.network import ModelConfig
from .model.train import TrainConfig
from .signals.dataset import DatasetSpec


def _value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_sections(text: str, source: str = "<config>"):
    """Return ``(shared, sections)``: a dict and an ordered list of ``(name, dict)``."""
    shared: dict = {}
    sections: list = []
    current = shared
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name or any(name == s for s, _ in sections):
                raise ConfigError(f"{source}:{n}: empty or repeated section name {name!r}")
            current = {}
            sections.append((name, current))
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: missing key")
        if key in current:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        current[key] = _value(raw)
    return shared, sections


def parse_flat(text: str, source: str = "<config>") -> dict:
    shared, sections = parse_sections(text, source)
    if sections:
        raise ConfigError(f"{source}: section headers are only allowed in grid files")
    return shared


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _coerce(cls, key, value):
    f = next(f for f in fields(cls) if f.name == key)
    default = f.default if f.default is not MISSING else None
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [_value(v.strip()) for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            value = [value]
        return tuple(value)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    return value


def split_keys(values: dict, *classes):
    """Route keys to the given config classes; unknown keys raise ``ConfigError``.

    A key that several classes share (``seed``) goes to the first listed.
    """
    routed = {cls: {} for cls in classes}
    for key, value in values.items():
        owner = next((cls for cls in classes if key in cls.field_names()), None)
        if owner is None:
            allowed = sorted(set().union(*(cls.field_names() for cls in classes)))
            raise ConfigError(f"unknown config key {key!r}; allowed keys: {', '.join(allowed)}")
        routed[owner][key] = _coerce(owner, key, value)
    return routed


def dataset_spec_from(values: dict) -> DatasetSpec:
    return DatasetSpec(**split_keys(values, DatasetSpec)[DatasetSpec])


def model_and_train_from(values: dict):
    r = split_keys(values, ModelConfig, TrainConfig)
    return r[ModelConfig], TrainConfig(**r[TrainConfig])
