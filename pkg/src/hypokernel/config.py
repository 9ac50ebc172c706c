"""Run configuration: an INI-style key-value format with one section per
experiment plus a [model] section.

Unknown keys are errors, never silently ignored; every present section is
validated before any computation starts.  The full schema is documented in
the README and echoed by ``hypokernel --help``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .fieldlang import FieldSyntaxError, ModelSpec, parse_matrix, parse_vector
from .models import BUILTIN_NAMES, builtin_model


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> list[float]:
    return [float(p) for p in s.replace(",", " ").split()]


def _parse_ints(s: str) -> list[int]:
    return [int(p) for p in s.replace(",", " ").split()]


_PARSERS = {
    "int": int,
    "float": float,
    "str": lambda s: s.strip(),
    "bool": _parse_bool,
    "floats": _parse_floats,
    "ints": _parse_ints,
}

# section -> key -> (type tag, default); None default means "optional, absent"
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "model": {
        "name": ("str", "pure-stable"),
        "alpha": ("float", 1.0),
        "dim": ("int", 1),
        "drift": ("str", None),
        "sigma": ("str", None),
        "matrix": ("str", None),
        "scan_lo": ("floats", None),
        "scan_hi": ("floats", None),
        "chain_length": ("int", 3),
        "gamma1": ("float", 1.0),
        "gammad": ("float", 1.0),
        "t1": ("float", 1.0),
        "td": ("float", 1.0),
    },
    "brackets": {
        "levels": ("int", 4),
        "node_budget": ("int", 200_000),
        "points_per_axis": ("int", 5),
    },
    "hormander": {
        "n_max": ("int", 6),
        "rank_tol": ("float", 1e-8),
        "j0": ("int", 2),
        "points_per_axis": ("int", 21),
        "point": ("floats", None),
    },
    "simulate": {
        "t_end": ("float", 1.0),
        "steps": ("int", 200),
        "delta": ("float", 0.5),
        "mode": ("str", "grid"),
        "record_threshold": ("float", None),
        "store_flow": ("bool", True),
        "n_paths": ("int", 1),
        "x0": ("floats", None),
    },
    "covariance": {
        "t_end": ("float", 1.0),
        "steps": ("int", 128),
        "n_paths": ("int", 10_000),
        "x0": ("floats", None),
    },
    "moments": {
        "t": ("float", 1.0),
        "steps": ("int", 128),
        "p": ("float", 1.0),
        "n_paths": ("int", 50_000),
        "truncation": ("float", 1e-3),
        "thresholds": ("floats", [1e-4, 1e-3, 1e-2, 1e-1]),
        "x0": ("floats", None),
    },
    "martlab": {
        "n_paths": ("int", 200),
        "esy_n": ("int", 10_000),
        "laplace_lambdas": ("floats", [1.0, 10.0, 100.0]),
        "laplace_f": ("float", 1.0),
        "laplace_t": ("float", 1.0),
        "kt_v": ("str", None),
        "kt_u": ("floats", None),
        "kt_which": ("str", "both"),
        "kt_delta": ("float", 0.1),
        "kt_epsilon": ("float", 0.05),
        "kt_horizon": ("float", 0.5),
        "kt_steps_list": ("ints", [64, 128]),
        "event_v": ("str", None),
        "event_u": ("floats", None),
        "event_t": ("float", 0.5),
        "event_delta": ("float", 0.2),
        "event_beta": ("float", 0.5),
        "event_n_paths": ("int", 1000),
    },
    "density": {
        "f": ("str", "cos(x1)"),
        "t_grid": ("floats", [1.0]),
        "n_paths": ("int", 5000),
        "x0": ("floats", None),
        "grid_lo": ("float", -40.0),
        "grid_hi": ("float", 40.0),
        "grid_points": ("int", 801),
        "offsets": ("floats", [0.0078125, 0.015625, 0.03125, 0.0625, 0.125]),
        "quad_r_min": ("float", 1e-4),
        "quad_r_max": ("float", 1e3),
        "quad_radial": ("int", 400),
        "smoothness_t": ("floats", None),
    },
    "verify-all": {
        "shadow_rerun": ("bool", True),
    },
}

EXPERIMENT_KINDS = ("brackets", "hormander", "simulate", "covariance",
                    "moments", "martlab", "density", "verify-all")


@dataclass
class RunConfig:
    """Validated run settings: experiment kind, model, parameters, output."""

    kind: str | None
    model_params: dict
    sections: dict[str, dict]
    seed: int
    out_dir: str | None
    raw_text: str
    source: str = "<config>"

    def params(self, kind: str | None = None) -> dict:
        kind = kind or self.kind
        if kind in self.sections:
            return self.sections[kind]
        return {k: d for k, (_, d) in SCHEMA.get(kind, {}).items()}

    def build_model(self) -> ModelSpec:
        return build_model(self.model_params)


def _validated_section(name: str, raw: dict[str, str], source: str) -> dict:
    schema = SCHEMA[name]
    out = {}
    for key, value in raw.items():
        if key not in schema:
            known = ", ".join(sorted(schema))
            raise ConfigError(
                f"{source}: unknown key {key!r} in section [{name}]; "
                f"known keys: {known}"
            )
        tag, _ = schema[key]
        try:
            out[key] = _PARSERS[tag](value)
        except ValueError as exc:
            raise ConfigError(
                f"{source}: bad value for {key!r} in [{name}]: {exc}"
            ) from exc
    for key, (_, default) in schema.items():
        out.setdefault(key, default)
    return out


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    sections: dict[str, dict] = {}
    seed = 0
    out_dir = None
    for name in parser.sections():
        if name == "run":
            raw = dict(parser.items(name))
            for key, value in raw.items():
                if key == "seed":
                    seed = int(value)
                elif key == "out":
                    out_dir = value.strip()
                else:
                    raise ConfigError(
                        f"{source}: unknown key {key!r} in section [run]; "
                        f"known keys: out, seed")
            continue
        if name not in SCHEMA:
            known = ", ".join(["run"] + sorted(SCHEMA))
            raise ConfigError(
                f"{source}: unknown section [{name}]; known sections: {known}")
        sections[name] = _validated_section(name, dict(parser.items(name)), source)
    model_params = sections.pop("model", _validated_section("model", {}, source))
    cfg = RunConfig(kind=None, model_params=model_params, sections=sections,
                    seed=seed, out_dir=out_dir, raw_text=text, source=source)
    build_model(model_params)  # validate before any computation starts
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Parse and fully validate a config file; unknown keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))


def build_model(params: dict) -> ModelSpec:
    """Model from a validated [model] section (builtin name or inline fields)."""
    name = params["name"]
    scan_lo = params.get("scan_lo")
    scan_hi = params.get("scan_hi")
    try:
        if name == "inline":
            if not params.get("drift") or not params.get("sigma"):
                raise ConfigError("inline models need both 'drift' and 'sigma'")
            d = params["dim"]
            drift = parse_vector(params["drift"], d)
            sigma = parse_matrix(params["sigma"], d)
            return ModelSpec(dim=d, alpha=params["alpha"], drift=drift,
                             sigma=sigma, scan_lo=scan_lo, scan_hi=scan_hi,
                             name="inline")
        model = builtin_model(
            name, alpha=params["alpha"], dim=params["dim"],
            matrix=params.get("matrix"), sigma=params.get("sigma"),
            chain_length=params["chain_length"], gamma1=params["gamma1"],
            gammad=params["gammad"], t1=params["t1"], td=params["td"],
        )
    except FieldSyntaxError as exc:
        raise ConfigError(f"model field: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if scan_lo is not None or scan_hi is not None:
        model = ModelSpec(dim=model.dim, alpha=model.alpha, drift=model.drift,
                          sigma=model.sigma, scan_lo=scan_lo, scan_hi=scan_hi,
                          name=model.name)
    return model


def schema_help() -> str:
    lines = ["config sections and keys (defaults in parentheses):"]
    for section, keys in SCHEMA.items():
        lines.append(f"  [{section}]")
        for key, (tag, default) in keys.items():
            lines.append(f"    {key} <{tag}> ({default})")
    lines.append("  [run]")
    lines.append("    out <str>, seed <int>")
    lines.append(f"builtin models: {', '.join(BUILTIN_NAMES)}, inline")
    return "\n".join(lines)
