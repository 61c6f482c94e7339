"""Sectioned key-value configuration files.

Four sections are recognized; every key is optional and falls back to the
reference defaults::

    [cells]       population and per-cell parameters
    [bounds]      balancing bounds and penalty weights
    [solver]      conic solver options
    [simulation]  timing, scheme and clustering

Errors carry ``path:line`` anchors.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import replace
from pathlib import Path

from .cell import AH
from .sim import SimConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A configuration file or override is invalid."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none") else _int(text)


# key -> (target, converter); targets are SimConfig fields, "cell.<field>",
# or "<field>[i]" for one end of a range pair
KEYS: dict[str, dict[str, tuple[str, object]]] = {
    "cells": {
        "n_cells": ("n_cells", _int),
        "capacity_ah": ("cell.capacity", lambda s: float(s) * AH),
        "resistance": ("cell.resistance", float),
        "converter_resistance": ("cell.converter_resistance", float),
        "mass": ("cell.mass", float),
        "area": ("cell.area", float),
        "heat_transfer": ("cell.heat_transfer", float),
        "specific_heat": ("cell.specific_heat", float),
        "soc_min": ("cell.soc_limits[0]", float),
        "soc_max": ("cell.soc_limits[1]", float),
        "current_min": ("cell.current_limits[0]", float),
        "current_max": ("cell.current_limits[1]", float),
        "temp_min": ("cell.temp_limits[0]", float),
        "temp_max": ("cell.temp_limits[1]", float),
        "init_soc_min": ("soc_range[0]", float),
        "init_soc_max": ("soc_range[1]", float),
        "init_temp_min": ("temp_range[0]", float),
        "init_temp_max": ("temp_range[1]", float),
        "resistance_min": ("resistance_range[0]", float),
        "resistance_max": ("resistance_range[1]", float),
    },
    "bounds": {
        "dq": ("dq", float),
        "dT": ("dT", float),
        "dq_bar": ("dq_bar", float),
        "dT_bar": ("dT_bar", float),
        "dq_intra": ("dq_intra", float),
        "dT_intra": ("dT_intra", float),
        "bound_floor": ("bound_floor", float),
        "slack_tol": ("slack_tol", float),
        "relax_bounds": ("relax_bounds", _bool),
        "lambda_E": ("lambda_E", float),
        "lambda_T": ("lambda_T", float),
        "lambda_E_cell": ("lambda_E_cell", float),
        "lambda_T_cell": ("lambda_T_cell", float),
    },
    "solver": {
        "tol": ("solver_tol", float),
        "exact_current": ("exact_current", _bool),
    },
    "simulation": {
        "seed": ("seed", _int),
        "dt": ("dt", float),
        "horizon": ("horizon", _int),
        "duration": ("duration", float),
        "t_env": ("t_env", float),
        "scheme": ("scheme", str),
        "recluster_period": ("recluster_period", _int),
        "k_max": ("k_max", _int),
        "k_method": ("k_method", str),
        "k_fixed": ("k_fixed", _optional_int),
        "tol_q": ("tol_q", float),
        "tol_T": ("tol_T", float),
        "gap_refs": ("gap_refs", _int),
        "cell_level": ("cell_level", _bool),
        "resistance_with_converter": ("resistance_with_converter", _bool),
        "snapshot_every": ("snapshot_every", _int),
    },
}

_SECTION = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:\s#;][^=:]*?)\s*[=:]")


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """First line number of every (section, key) in the file."""
    lines: dict[tuple[str, str], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, ""), lineno)
            continue
        m = _KEY.match(line)
        if m and section is not None and not line[:1].isspace():
            lines.setdefault((section, m.group(1).strip()), lineno)
    return lines


def apply_overrides(config: SimConfig, values: dict[str, object]) -> SimConfig:
    """Apply {target: value} pairs using the target syntax of :data:`KEYS`."""
    top: dict[str, object] = {}
    cell: dict[str, object] = {}
    for target, value in values.items():
        dest, name = (cell, target[5:]) if target.startswith("cell.") else (top, target)
        if name.endswith("]"):
            base, idx = name[:-3], int(name[-2])
            current = dest.get(base)
            if current is None:
                current = getattr(config.cell if dest is cell else config, base)
            pair = list(current)
            pair[idx] = value
            dest[base] = tuple(pair)
        else:
            dest[name] = value
    if cell:
        top["cell"] = replace(config.cell, **cell)
    return replace(config, **top)


def parse_config(path, base: SimConfig | None = None) -> SimConfig:
    """Read a configuration file on top of ``base`` (reference defaults if omitted)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror or exc}") from exc
    return parse_config_text(text, str(path), base)


def parse_config_text(text: str, source: str = "<config>", base: SimConfig | None = None) -> SimConfig:
    parser = configparser.ConfigParser(
        interpolation=None, strict=True, default_section="\x00defaults", inline_comment_prefixes=("#", ";")
    )
    parser.optionxform = str  # keys are case-sensitive (dT vs dt)
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate key {exc.option!r} in section [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: key outside of any section") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ConfigError(f"{source}:{lineno}: cannot parse line") from None

    lines = _key_lines(text)
    unknown_sections = [s for s in parser.sections() if s not in KEYS]
    if unknown_sections:
        s = unknown_sections[0]
        raise ConfigError(
            f"{source}:{lines.get((s, ''), '?')}: unknown section(s) {', '.join('[' + u + ']' for u in unknown_sections)}; "
            f"expected {', '.join('[' + k + ']' for k in KEYS)}"
        )
    unknown = [(s, key) for s in parser.sections() for key in parser[s] if key not in KEYS[s]]
    if unknown:
        where = lines.get(unknown[0], "?")
        listed = ", ".join(f"[{s}] {key}" for s, key in unknown)
        raise ConfigError(f"{source}:{where}: unknown key(s): {listed}")

    values: dict[str, object] = {}
    origin: dict[str, int | str] = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            target, convert = KEYS[section][key]
            where = lines.get((section, key), "?")
            if not raw.strip() and convert is not _optional_int:
                raise ConfigError(f"{source}:{where}: key {key!r} has no value")
            try:
                values[target] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"{source}:{where}: bad value for {key!r}: {exc}") from None
            origin[target.split("[")[0].removeprefix("cell.")] = where

    try:
        return apply_overrides(base or SimConfig(), values)
    except ValueError as exc:
        msg = str(exc)
        words = re.findall(r"\w+", msg)
        where = next((origin[w] for w in words if w in origin), "?")
        raise ConfigError(f"{source}:{where}: {msg}") from None


def default_config_text() -> str:
    """The reference defaults written out as a configuration file."""
    cfg = SimConfig()
    out = [f"# schema_version: {SCHEMA_VERSION}"]
    for section, keys in KEYS.items():
        out.append(f"\n[{section}]")
        for key, (target, _) in keys.items():
            out.append(f"{key} = {_format(_lookup(cfg, target), key)}")
    return "\n".join(out) + "\n"


def _lookup(cfg: SimConfig, target: str):
    obj: object = cfg
    name = target
    if target.startswith("cell."):
        obj, name = cfg.cell, target[5:]
    if name.endswith("]"):
        return getattr(obj, name[:-3])[int(name[-2])]
    return getattr(obj, name)


def _format(value, key: str) -> str:
    if key == "capacity_ah":
        value = value / AH
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)

