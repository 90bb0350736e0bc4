"""Tiny JSON schema helpers with path-addressed error messages."""

from __future__ import annotations

import json
from pathlib import Path


class TopologyError(ValueError):
    """Topology file failed to parse or validate; message carries the
    file name plus the JSON path (or line for syntax errors)."""


class ActionError(ValueError):
    """Joint action rejected by an environment."""


def load_json_file(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        value = json.loads(text)
    except json.JSONDecodeError as e:
        raise TopologyError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(value, dict):
        raise TopologyError(f"{path}: top level must be a JSON object")
    return value


class Checker:
    """Walks a parsed JSON tree, addressing errors by path."""

    def __init__(self, filename: str) -> None:
        self.filename = filename

    def fail(self, path: str, msg: str) -> "TopologyError":
        return TopologyError(f"{self.filename}: {path}: {msg}")

    def obj(self, value, path: str, required: dict, optional: dict | None = None) -> dict:
        """Validate an object's key set and each value's type.

        ``required``/``optional`` map key -> expected type (or tuple).
        Returns the object; unknown keys are rejected.
        """
        optional = optional or {}
        if not isinstance(value, dict):
            raise self.fail(path, f"expected object, got {type(value).__name__}")
        unknown = set(value) - set(required) - set(optional)
        if unknown:
            raise self.fail(path, f"unknown keys {sorted(unknown)}")
        for key, typ in required.items():
            if key not in value:
                raise self.fail(path, f"missing required key '{key}'")
            self._check_type(value[key], f"{path}.{key}", typ)
        for key, typ in optional.items():
            if key in value:
                self._check_type(value[key], f"{path}.{key}", typ)
        return value

    def _check_type(self, value, path: str, typ) -> None:
        if typ is float:
            typ = (int, float)
        if not isinstance(value, typ):
            name = typ.__name__ if isinstance(typ, type) else "/".join(t.__name__ for t in typ)
            raise self.fail(path, f"expected {name}, got {type(value).__name__}")
        if isinstance(value, bool) and typ != bool and bool not in (typ if isinstance(typ, tuple) else (typ,)):
            raise self.fail(path, "expected number, got boolean")

    def positive(self, value, path: str) -> float:
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
            raise self.fail(path, f"must be a positive number, got {value!r}")
        return float(value)

    def nonneg(self, value, path: str) -> float:
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value < 0:
            raise self.fail(path, f"must be a nonnegative number, got {value!r}")
        return float(value)
