"""Scenario files: TOML with a versioned JSON schema and centralized defaults."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import DynamicsSpec
from .expr import Field

__all__ = [
    "SCHEMA",
    "DEFAULTS",
    "ANALYSES",
    "REQUIRES",
    "ScenarioError",
    "Scenario",
    "load_scenario",
    "shipped_scenarios",
    "resolve_path",
]

ANALYSES = ("invariant", "kernel", "spectrum", "resolvent", "torus", "validate")
REQUIRES = {
    "invariant": (),
    "kernel": ("invariant",),
    "spectrum": ("kernel",),
    "resolvent": ("kernel",),
    "torus": (),
    "validate": (),  # spectrum or torus, checked separately
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_expr_list = {"type": "array", "items": {"type": "string"}, "minItems": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mvstab scenario",
    "type": "object",
    "required": ["schema", "name", "analyses"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "analyses": {"type": "array", "items": {"enum": list(ANALYSES)}, "uniqueItems": True},
        "output": {"type": "string"},
        "dynamics": {
            "type": "object",
            "required": ["dim", "drift"],
            "additionalProperties": False,
            "properties": {
                "dim": _posint,
                "drift": _expr_list,
                "sigma": {"oneOf": [_num, {"type": "array", "items": {"type": "array", "items": _num}}]},
                "constants": {"type": "object", "additionalProperties": _num},
                "interaction": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["f", "w"],
                        "additionalProperties": False,
                        "properties": {"f": {"type": "string"}, "w": _expr_list},
                    },
                },
            },
        },
        "torus": {
            "type": "object",
            "required": ["W"],
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "W": {"type": "string"},
                "constants": {"type": "object", "additionalProperties": _num},
                "beta": _pos,
                "n_max": _posint,
                "q": _posint,
            },
        },
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"M": _posint, "N": {"type": "integer", "minimum": 2}, "seed": {"type": "integer", "minimum": 0}},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"step": _pos, "T": _pos, "dt": _pos, "kappa_hat": _pos},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _pos,
                "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_iter": _posint,
                "method": {"enum": ["damped", "newton"]},
                "a0": {"type": "array", "items": _num},
                "multistart": {"type": "boolean"},
            },
        },
        "spectral": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "re_min": _num,
                "re_max": _num,
                "im_max": _pos,
                "omega_tol": _pos,
                "refine_tol": _pos,
            },
        },
        "validate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 2},
                "T": _pos,
                "dt": _pos,
                "shift": _num,
                "eps": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "record_dt": _pos,
                "transient": {"type": "number", "minimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "output": None,
    "description": "",
    "mc": {"M": 20000, "N": 2000, "seed": 0},
    "grid": {"step": 1e-2, "T": 10.0, "dt": 1e-2, "kappa_hat": 1.0},
    "solver": {"tol": 1e-6, "damping": 0.5, "max_iter": 200, "method": "damped", "a0": None, "multistart": False},
    "spectral": {"re_min": None, "re_max": None, "im_max": 20.0, "omega_tol": 1e-3, "refine_tol": 1e-10},
    "torus": {"dim": 1, "beta": 1.0, "n_max": None, "q": None, "constants": {}},
    "validate": {"N": 5000, "T": 15.0, "dt": 1e-2, "shift": 0.1, "eps": 0.9, "record_dt": 0.25, "transient": 1.0},
}


class ScenarioError(ValueError):
    """Schema or consistency problem in a scenario file."""


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (f".{p}" if parts else str(p)))
    return "".join(parts) or "<root>"


@dataclass
class Scenario:
    name: str
    config: dict  # fully resolved, defaults included
    source: Path
    sha256: str
    analyses: tuple

    def spec(self) -> DynamicsSpec:
        dyn = self.config["dynamics"]
        sigma = dyn.get("sigma")
        if sigma is None:
            raise ScenarioError("dynamics.sigma: required for euclidean dynamics")
        return DynamicsSpec.from_strings(
            dyn["dim"], dyn["drift"], [(t["f"], t["w"]) for t in dyn.get("interaction", [])],
            sigma=sigma if isinstance(sigma, list) else [[float(sigma)]],
            constants=dyn.get("constants") or None, name=self.name,
        )

    def torus_potential(self) -> Field:
        tor = self.config["torus"]
        return Field.parse(tor["W"], tor["dim"], tor.get("constants") or None)


def _closure(requested) -> tuple:
    out = []

    def add(a):
        for r in REQUIRES[a]:
            add(r)
        if a not in out:
            out.append(a)

    for a in requested:
        add(a)
    return tuple(a for a in ANALYSES if a in out)


def load_scenario(path, *, extra=(), auto_requires: bool = False) -> Scenario:
    """Parse, validate and resolve a scenario file.

    ``extra`` appends analyses (``validate`` for the CLI subcommand); with
    ``auto_requires`` their prerequisites are added instead of rejected.
    """
    path = Path(path)
    raw = path.read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
        raise ScenarioError(f"{path}: not valid TOML: {err}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_path(e)}: {e.message}" for e in errors]
        raise ScenarioError("schema errors:\n  " + "\n  ".join(lines))
    cfg = _merge(DEFAULTS, data)
    requested = list(data["analyses"]) + [a for a in extra if a not in data["analyses"]]
    torus_mode = "torus" in data
    if auto_requires and "validate" in requested:
        requested.append("torus" if torus_mode else "spectrum")
    if auto_requires:
        analyses = _closure(requested)
    else:
        analyses = tuple(a for a in ANALYSES if a in requested)
        for a in analyses:
            missing = [r for r in REQUIRES[a] if r not in analyses]
            if missing:
                raise ScenarioError(f"analyses: '{a}' requires {', '.join(repr(m) for m in missing)}")
        if "validate" in analyses and "spectrum" not in analyses and "torus" not in analyses:
            raise ScenarioError("analyses: 'validate' requires 'spectrum' (or 'torus')")
    needs_dyn = any(a in analyses for a in ("invariant", "kernel", "spectrum", "resolvent"))
    if needs_dyn and "dynamics" not in data:
        raise ScenarioError("dynamics: required by the requested analyses")
    if "torus" in analyses and not torus_mode:
        raise ScenarioError("torus: section required by the 'torus' analysis")
    if "validate" in analyses and "spectrum" not in analyses and "torus" not in analyses:
        raise ScenarioError("analyses: 'validate' requires 'spectrum' (or 'torus')")
    scen = Scenario(data["name"], cfg, path, hashlib.sha256(raw).hexdigest(), analyses)
    # surface expression errors now, before any numerical work
    if "dynamics" in data:
        try:
            scen.spec()
        except ScenarioError:
            raise
        except ValueError as err:
            raise ScenarioError(f"dynamics: {err}") from None
    if torus_mode:
        try:
            scen.torus_potential()
        except ValueError as err:
            raise ScenarioError(f"torus.W: {err}") from None
    return scen


def shipped_scenarios() -> dict:
    """Name -> path of the scenarios bundled with the package."""
    root = resources.files("mvstab") / "scenarios"
    return {p.name[:-5]: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name) if p.name.endswith(".toml")}


def resolve_path(arg: str) -> Path:
    """A file path, or the name of a shipped scenario."""
    p = Path(arg)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    key = p.name[:-5] if p.name.endswith(".toml") else p.name
    if key in shipped:
        return shipped[key]
    raise FileNotFoundError(f"no scenario file {arg!r} (shipped: {', '.join(shipped)})")
