"""Plain-text experiment configuration.

Files use `[experiment]` sections of `key = value` lines (configparser
syntax, `#` comments, no interpolation). Values are parsed by per-key
schemas; a key the schema does not know is a hard error rather than a
silent ignore, since a typo like `widhts` would otherwise run the
default sweep and waste the budget.

Number grammar: plain decimals, or powers written `2^-12`. Grid
grammar: a comma list (`32, 128, 512`), or a factor-2 ladder written
`2^-12 .. 2^0` (inclusive on both ends), or a single value.
"""

from __future__ import annotations

import configparser
import re
from typing import Callable, Dict, Optional

from .errors import ConfigError

__all__ = [
    "load_config",
    "parse_number",
    "parse_int",
    "parse_grid",
    "parse_int_list",
    "parse_str",
    "parse_bool",
    "apply_schema",
    "REQUIRED",
]

REQUIRED = object()  # schema marker: no default, the key must be present

_POWER = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*\^\s*([+-]?[0-9]+)\s*$")


def parse_number(text: str) -> float:
    """A decimal literal or a `base^exponent` power."""
    match = _POWER.match(text)
    if match:
        return float(match.group(1)) ** int(match.group(2))
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse number {text!r}") from None


def parse_int(text: str) -> int:
    value = parse_number(text)
    if value != int(value):
        raise ConfigError(f"expected an integer, got {text!r}")
    return int(value)


def parse_grid(text: str) -> list:
    """Comma list, `lo .. hi` factor-2 ladder, or single number."""
    if ".." in text:
        parts = [p.strip() for p in text.split("..")]
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ConfigError(f"ladder syntax is 'lo .. hi', got {text!r}")
        lo, hi = parse_number(parts[0]), parse_number(parts[1])
        if lo <= 0 or hi < lo:
            raise ConfigError(f"ladder needs 0 < lo <= hi, got {text!r}")
        grid = []
        value = lo
        # run in exact powers: hi/lo should be a power of two
        while value < hi * (1.0 + 1e-12):
            grid.append(value)
            value *= 2.0
        if abs(grid[-1] - hi) > 1e-9 * hi:
            raise ConfigError(
                f"ladder {text!r} does not land on its upper end by factors of 2"
            )
        return grid
    items = [p.strip() for p in text.split(",") if p.strip()]
    if not items:
        raise ConfigError(f"empty grid {text!r}")
    return [parse_number(p) for p in items]


def parse_int_list(text: str) -> list:
    return [int(v) if v == int(v) else _bad_int(text) for v in parse_grid(text)]


def _bad_int(text):
    raise ConfigError(f"expected integers in {text!r}")


def parse_str(text: str) -> str:
    return text.strip()


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"cannot parse boolean {text!r}")


def load_config(path) -> Dict[str, Dict[str, str]]:
    """Read a config file into {section: {key: raw value}}."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def apply_schema(
    section: str,
    raw: Optional[Dict[str, str]],
    schema: Dict[str, tuple],
) -> dict:
    """Parse one section against {key: (parser, default)}.

    A REQUIRED default means the key must be present; unknown keys are
    errors.
    """
    raw = dict(raw or {})
    out = {}
    for key, (parser, default) in schema.items():
        if key in raw:
            text = raw.pop(key)
            try:
                out[key] = parser(text)
            except ConfigError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        elif default is REQUIRED:
            raise ConfigError(f"[{section}] is missing the required key {key!r}")
        else:
            out[key] = default
    if raw:
        names = ", ".join(sorted(raw))
        raise ConfigError(f"[{section}] has unknown key(s): {names}")
    return out
