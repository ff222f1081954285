"""Plain-text ``key = value`` config grammar.

One assignment per line, ``#`` starts a comment, blank lines ignored.
Values are coerced by the target dataclass's field types: ints, floats,
bools (true/false), strings, and bracketed integer lists like
``[8, 16, 32, 64]`` for tuple fields.
"""

from __future__ import annotations

import dataclasses
import typing

from .errors import FormatError


def parse_text(text: str) -> dict[str, str]:
    """Raw key -> value-string mapping; later keys override earlier ones."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise FormatError(f"line {lineno}: empty key")
        out[key] = value
    return out


def format_mapping(mapping: dict[str, object]) -> str:
    lines = []
    for key, value in mapping.items():
        if isinstance(value, (tuple, list)):
            body = "[" + ", ".join(str(v) for v in value) + "]"
        elif isinstance(value, bool):
            body = "true" if value else "false"
        elif isinstance(value, float):
            body = repr(value)
        else:
            body = str(value)
        lines.append(f"{key} = {body}")
    return "\n".join(lines) + "\n"


def _coerce_one(key: str, value: str, ftype) -> object:
    origin = typing.get_origin(ftype)
    if ftype is bool:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise FormatError(f"{key}: expected a boolean, got {value!r}")
    if ftype is int:
        try:
            return int(value)
        except ValueError as e:
            raise FormatError(f"{key}: expected an integer, got {value!r}") from e
    if ftype is float:
        try:
            return float(value)
        except ValueError as e:
            raise FormatError(f"{key}: expected a number, got {value!r}") from e
    if ftype is str:
        return value
    if origin is tuple:
        inner = value.strip()
        if inner.startswith("[") and inner.endswith("]"):
            inner = inner[1:-1]
        elif inner.startswith("(") and inner.endswith(")"):
            inner = inner[1:-1]
        items = [s.strip() for s in inner.split(",") if s.strip()]
        args = typing.get_args(ftype)
        elem = args[0] if args else int
        return tuple(_coerce_one(key, s, elem) for s in items)
    if origin is typing.Union:
        for cand in typing.get_args(ftype):
            if cand is type(None):
                continue
            try:
                return _coerce_one(key, value, cand)
            except FormatError:
                continue
        raise FormatError(f"{key}: cannot parse {value!r}")
    raise FormatError(f"{key}: unsupported field type {ftype}")


def coerce_fields(cls, raw: dict[str, str], aliases: dict[str, str] | None = None):
    """Split a raw mapping into kwargs for dataclass ``cls`` plus leftovers."""
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    hints = typing.get_type_hints(cls)
    kwargs = {}
    rest = {}
    for key, value in raw.items():
        name = aliases.get(key, key) if aliases else key
        if name in fields:
            kwargs[name] = _coerce_one(name, value, hints[name])
        else:
            rest[key] = value
    return kwargs, rest
