"""``key = value`` configuration files with one section per experiment.

Values are parsed as Python literals when possible (``8``, ``1e-6``,
``[20, 40]``, ``(1.0, 10.0)``, ``true``), otherwise kept as strings.
"""
from __future__ import annotations

import ast
import configparser
import dataclasses
from pathlib import Path
from typing import Any, Mapping, TypeVar

T = TypeVar("T")

_BOOLS = {"true": True, "false": False, "yes": True, "no": False, "on": True, "off": False}


def parse_value(text: str) -> Any:
    s = text.strip()
    if s.lower() in _BOOLS:
        return _BOOLS[s.lower()]
    try:
        return ast.literal_eval(s)
    except (ValueError, SyntaxError):
        return s


def load_config(path: str | Path) -> dict[str, dict[str, Any]]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        cp.read_file(f)
    return {name: {k: parse_value(v) for k, v in cp[name].items()} for name in cp.sections()}


def from_mapping(cls: type[T], values: Mapping[str, Any], **overrides) -> T:
    """Build dataclass ``cls`` from ``values``; unknown keys raise ``KeyError``."""
    names = {f.name for f in dataclasses.fields(cls)}
    merged = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = set(merged) - names
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    for k, v in list(merged.items()):
        if isinstance(v, list):
            merged[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return cls(**merged)
