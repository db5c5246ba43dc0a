"""Plain-text ``key=value`` files.

One pair per line. Blank lines and lines starting with ``#`` are ignored.
Keys and values are stripped of surrounding whitespace; values are kept as
strings and converted by the caller.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(items: Mapping[str, object] | Iterable[tuple[str, object]]) -> str:
    pairs = items.items() if isinstance(items, Mapping) else items
    lines = []
    for key, value in pairs:
        text = format_value(value)
        if "\n" in text:
            raise ConfigError(f"value for {key!r} contains a newline")
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def to_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")
