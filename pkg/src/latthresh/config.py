"""Run configuration: a single JSON document, schema-validated.

Example::

    {
      "dim": 3,
      "dispersion": "laplacian",
      "potential": [{"x": [0, 0, 0], "value": -1.0}],
      "mu": 5.0,
      "k": {"grid": {"lo": -0.6, "hi": 0.6, "num": 3}},
      "output": "out"
    }
"""

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .model import DispersionRelation, Potential, laplacian_dispersion


class ConfigError(ValueError):
    """Invalid configuration (exit status 2)."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_TABLE = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "properties": {"s": {"type": "array", "items": {"type": "integer"}},
                       "x": {"type": "array", "items": {"type": "integer"}},
                       "value": _NUM},
        "required": ["value"],
        "additionalProperties": False,
    },
}
_GRID = {
    "type": "object",
    "properties": {
        "lo": {"anyOf": [_NUM, _VEC]},
        "hi": {"anyOf": [_NUM, _VEC]},
        "num": {"anyOf": [{"type": "integer", "minimum": 1, "maximum": 10000},
                          {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
    },
    "required": ["lo", "hi", "num"],
    "additionalProperties": False,
}
_RANGE = {
    "type": "object",
    "properties": {"start": _POS, "stop": _POS, "num": {"type": "integer", "minimum": 1, "maximum": 10000}},
    "required": ["start", "stop", "num"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "dim": {"type": "integer", "minimum": 1, "maximum": 8},
        "dispersion": {"anyOf": [{"const": "laplacian"}, _TABLE]},
        "potential": {"anyOf": [_TABLE, {"type": "object",
                                         "properties": {"delta": {"type": "number", "maximum": 0}},
                                         "required": ["delta"], "additionalProperties": False}]},
        "mu": {"anyOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}, _RANGE,
                         {"const": "critical"}]},
        "k": {"anyOf": [_VEC, {"type": "array", "items": _VEC, "minItems": 1},
                        {"type": "object", "properties": {"grid": _GRID}, "required": ["grid"],
                         "additionalProperties": False}]},
        "k0": _VEC,
        "green": {
            "type": "object",
            "properties": {
                "z": {"anyOf": [_NUM, {"const": "threshold"}]},
                "binding": {"type": "number", "minimum": 0},
                "window": {"type": "integer", "minimum": 0, "maximum": 64},
                "method": {"enum": ["auto", "bessel", "quadrature", "subtraction", "extrapolation"]},
            },
            "additionalProperties": False,
        },
        "quadrature": {
            "type": "object",
            "properties": {"n_axis": {"type": "integer", "minimum": 4},
                           "n_max": {"type": "integer", "minimum": 4},
                           "tol": _POS},
            "additionalProperties": False,
        },
        "oracle": {
            "type": "object",
            "properties": {"L": {"type": "integer", "minimum": 1},
                           "L_max": {"type": "integer", "minimum": 1},
                           "cap": {"type": "integer", "minimum": 1},
                           "tol": _POS,
                           "N": {"type": "integer", "minimum": 2, "maximum": 12},
                           "z_ladder": {"type": "integer", "minimum": 1, "maximum": 200}},
            "additionalProperties": False,
        },
        "threshold": {
            "type": "object",
            "properties": {"window": {"type": "integer", "minimum": 1, "maximum": 32},
                           "k_radii": {"type": "array", "items": _POS},
                           "mu_radii": {"type": "array", "items": _POS}},
            "additionalProperties": False,
        },
        "validate": {
            "type": "object",
            "properties": {"criteria": {"type": "array",
                                        "items": {"type": "integer", "minimum": 1, "maximum": 9}}},
            "additionalProperties": False,
        },
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}


@dataclass
class RunConfig:
    raw: dict
    dim: int
    eps: DispersionRelation
    potential: Potential
    mus: list
    ks: np.ndarray
    k0: np.ndarray
    output: str
    seed: int
    threads: int
    section: dict = field(default_factory=dict)

    @property
    def digest(self):
        return config_hash(self.raw)

    def get(self, name, key, default=None):
        return self.raw.get(name, {}).get(key, default)


def config_hash(raw):
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _error_path(err):
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def _grid(spec, dim):
    lo = np.broadcast_to(np.asarray(spec["lo"], dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(spec["hi"], dtype=float), (dim,))
    num = np.broadcast_to(np.asarray(spec["num"], dtype=int), (dim,))
    if np.prod(num.astype(float)) > 1e6:
        raise ConfigError("k: grid has more than 10^6 points")
    axes = [np.linspace(a, b, n) for a, b, n in zip(lo, hi, num)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _table(entries, dim, key, what):
    out = {}
    for i, e in enumerate(entries):
        if key not in e:
            raise ConfigError(f"{what}/{i}: missing key '{key}'")
        if len(e[key]) != dim:
            raise ConfigError(f"{what}/{i}/{key}: expected {dim} components")
        out[tuple(e[key])] = float(e["value"])
    return out


def parse_config(raw):
    """Validate ``raw`` and build domain objects; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"config key '{_error_path(err)}': {err.message}") from None
    dim = raw.get("dim", 1)
    disp = raw.get("dispersion", "laplacian")
    try:
        eps = laplacian_dispersion(dim) if disp == "laplacian" else \
            DispersionRelation(dim, _table(disp, dim, "s", "dispersion"))
        pot = raw.get("potential", {"delta": -1.0})
        if isinstance(pot, dict):
            potential = Potential.delta(dim, pot["delta"])
        else:
            potential = Potential(dim, _table(pot, dim, "x", "potential"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    mu = raw.get("mu", 1.0)
    if mu == "critical":
        mus = None  # resolved per command: mu*(k0), classify and phase-map only
    elif isinstance(mu, dict):
        mus = list(np.linspace(mu["start"], mu["stop"], mu["num"]))
    elif isinstance(mu, list):
        mus = [float(m) for m in mu]
    else:
        mus = [float(mu)]
    k = raw.get("k", [0.0] * dim)
    if isinstance(k, dict):
        ks = _grid(k["grid"], dim)
    else:
        ks = np.atleast_2d(np.asarray(k, dtype=float))
    if ks.shape[1] != dim:
        raise ConfigError(f"config key 'k': expected {dim} components")
    k0 = np.asarray(raw.get("k0", [0.0] * dim), dtype=float)
    if k0.shape != (dim,):
        raise ConfigError(f"config key 'k0': expected {dim} components")
    return RunConfig(raw, dim, eps, potential, mus, ks, k0, raw.get("output", "out"),
                     raw.get("seed", 0), raw.get("threads", 1))


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw)
