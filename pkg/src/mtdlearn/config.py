"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. ``lambda``, ``K`` and ``mode``
accept comma-separated lists for sweeps.
"""

from __future__ import annotations

from pathlib import Path

KEYS = (
    "R", "lambda", "l", "tau", "T", "r_c", "r_d", "p11", "p10", "K", "reps", "master_seed",
    "mode", "abnormality_x", "abnormality_y", "onset_slot", "episode_cap",
)

_INT = {"l", "T", "reps", "master_seed", "onset_slot", "episode_cap"}
_FLOAT = {"R", "tau", "r_c", "r_d", "p11", "p10", "abnormality_x", "abnormality_y"}


class ConfigError(ValueError):
    pass


def parse_list(text: str, cast):
    return [cast(v.strip()) for v in text.split(",") if v.strip()]


def parse_config(text: str) -> dict:
    """Parse config text into typed values; list-valued keys become lists."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in _INT:
                out[key] = int(value)
            elif key in _FLOAT:
                out[key] = float(value)
            elif key == "lambda":
                out[key] = parse_list(value, float)
            elif key == "K":
                out[key] = parse_list(value, int)
            else:
                out[key] = parse_list(value, str)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return out


def load_config(path: str | Path) -> dict:
    return parse_config(Path(path).read_text())
