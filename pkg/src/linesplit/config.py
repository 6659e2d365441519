"""INI run configuration mapped onto StudyConfig."""

from __future__ import annotations

import configparser
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .kernels import KernelConfig
from .mesh import Box
from .studies import StudyConfig

# section -> key -> parser
_SCHEMA = {
    "study": {
        "study": str,
        "offset": "pair",
        "element": str,
        "h_perp": "hlist",
        "h_par": "hlist",
        "method": str,
        "exclusion_radius": float,
        "alpha": float,
        "split_height": float,
        "fractions": "flist",
    },
    "mesh": {"lo": "triple", "hi": "triple"},
    "solver": {"rel_tol": float, "max_iter": int},
    "quadrature": {"volume_degree": int, "line_points": int, "facet_degree": int},
    "kernel": {"clamp_dist": float},
    "output": {"out_dir": str, "vtk": "bool", "threads": int},
}


def parse_fraction(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number or fraction: {text!r}") from exc


def parse_fraction_list(text: str) -> tuple[float, ...]:
    items = [t for t in text.replace(" ", "").split(",") if t]
    if not items:
        raise ConfigError("empty list")
    return tuple(parse_fraction(t) for t in items)


def _convert(kind, raw: str, where: str):
    try:
        if kind == "hlist" or kind == "flist":
            return parse_fraction_list(raw)
        if kind in ("pair", "triple"):
            vals = parse_fraction_list(raw)
            if len(vals) != (2 if kind == "pair" else 3):
                raise ConfigError(f"expected {kind} of numbers")
            return vals
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ConfigError(f"not a boolean: {raw!r}")
            return low in ("1", "true", "yes", "on")
        return kind(raw.strip())
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def read_config(path) -> dict[str, dict]:
    """Parse an INI file into typed values; unknown sections or keys are errors."""
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        keys = _SCHEMA[section]
        vals = {}
        for key, raw in cp.items(section):
            if key not in keys:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            vals[key] = _convert(keys[key], raw, f"{path}: [{section}] {key}")
        out[section] = vals
    return out


def apply_config(base: StudyConfig, values: dict[str, dict]) -> StudyConfig:
    kw = dict(values.get("study", {}))
    try:
        if "mesh" in values:
            m = values["mesh"]
            kw["box"] = Box(m.get("lo", base.box.lo), m.get("hi", base.box.hi))
        if "solver" in values:
            kw["solver"] = replace(base.solver, **values["solver"])
        if "quadrature" in values:
            kw["quad"] = replace(base.quad, **values["quadrature"])
        if "kernel" in values:
            kw["kernel"] = KernelConfig(**values["kernel"])
        kw.update(values.get("output", {}))
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_study_config(path, base: StudyConfig | None = None) -> StudyConfig:
    return apply_config(base or StudyConfig(), read_config(path))

