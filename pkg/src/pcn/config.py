"""Key-value configuration files (``key = value`` lines grouped by ``[section]``).

Dataclass configs are converted to and from plain string mappings so the
same text form serves config files, checkpoint manifests, dataset
manifests and the effective-config echo written by the CLI.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import types
import typing
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(":".join(_format(x) for x in v) if isinstance(v, tuple) else _format(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _parse(text: str, tp, key: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        if text.lower() in ("none", ""):
            return None
        return _parse(text, inner[0], key)
    try:
        if tp is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if origin in (list, tuple):
            elem = args[0]
            items = [t for t in (s.strip() for s in text.split(",")) if t]
            if typing.get_origin(elem) is tuple:
                kinds = typing.get_args(elem)
                out = []
                for it in items:
                    parts = it.split(":")
                    if len(parts) != len(kinds):
                        raise ValueError(it)
                    out.append(tuple(_parse(p, k, key) for p, k in zip(parts, kinds)))
                return out
            return [_parse(t, elem, key) for t in items]
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {tp}") from exc
    raise ConfigError(f"config key {key!r}: unsupported type {tp}")


def to_items(obj) -> dict[str, str]:
    return {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def from_items(cls, items: Mapping[str, str], section: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, text in items.items():
        if key not in names:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key {where!r}")
        kwargs[key] = _parse(text, hints[key], f"{section}.{key}" if section else key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] config: {exc}") from exc


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def parse_sections(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    cp = _parser()
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return {s: dict(cp.items(s)) for s in cp.sections()}


def read_sections(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_sections(text, str(path))


def format_sections(sections: Mapping[str, Mapping[str, str]]) -> str:
    buf = io.StringIO()
    for name, items in sections.items():
        buf.write(f"[{name}]\n")
        for k, v in items.items():
            buf.write(f"{k} = {v}\n")
        buf.write("\n")
    return buf.getvalue()


def write_sections(sections: Mapping[str, Mapping[str, str]], path) -> None:
    Path(path).write_text(format_sections(sections), encoding="utf-8")


def apply_overrides(sections: dict[str, dict[str, str]], overrides) -> dict[str, dict[str, str]]:
    """Apply ``section.key=value`` strings on top of parsed sections."""
    out = {s: dict(v) for s, v in sections.items()}
    for ov in overrides or ():
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override {ov!r} is not of the form section.key=value")
        dotted, value = ov.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        out.setdefault(section, {})[key] = value.strip()
    return out
