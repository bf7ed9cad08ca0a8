"""Run configuration: strict JSON with documented defaults.

Every section is optional; missing keys take the defaults printed by
``robincusp --print-defaults``.  Unknown keys are rejected and every
validation error names the offending field by its JSON pointer.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any

import jsonschema

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "geometry": _obj({
        "omega_halfwidth": _POS,
        "d": _POS,
        "head_length": _POS,
    }),
    "physics": _obj({
        "robin_a": _NUM,
        "end_bc": {"enum": ["robin", "neumann", "dirichlet"]},
        "symmetry_split": {"type": "boolean"},
    }),
    "sweep": _obj({
        "model": {"enum": ["fem2d", "reduced1d"]},
        "eps": {"oneOf": [
            {"type": "array", "items": _POS},
            _obj({"start": _POS, "stop": _POS, "count": {"type": "integer", "minimum": 1}},
                 required=("start", "stop", "count")),
        ]},
    }),
    "window": _obj({"lo": _NUM, "hi": _NUM}),
    "mesh": _obj({
        "layers_per_period": {"type": "integer", "minimum": 16},
        "ny": {"type": "integer", "minimum": 3},
        "head_res": {"type": "integer", "minimum": 1},
        "max_aspect": {"oneOf": [_POS, {"type": "null"}]},
        "min_angle_floor": {"type": "number", "minimum": 0, "maximum": 60},
    }),
    "reduced": _obj({
        "nodes_per_period": {"type": "integer", "minimum": 8},
        "outer_bc": {"enum": ["dirichlet", "neumann"]},
    }),
    "solver": _obj({
        "tol": _POS,
        "dense_threshold": {"type": "integer", "minimum": 0},
    }),
    "analysis": _obj({
        "lambda_star": _NUM,
        "z_cut": _POS,
        "stable_tol_frac": _POS,
        "min_rate_frac": _POS,
        "gate_frac": _POS,
        "tie_tol": _POS,
        "fit_tol": _POS,
        "kappa": _POS,
        "blink_periods": {"type": "integer", "minimum": 1},
        "eps_seed_max": _POS,
    }),
    "output": _obj({"directory": {"type": "string", "minLength": 1}}),
})

DEFAULTS: dict[str, dict[str, Any]] = {
    "geometry": {"omega_halfwidth": 1.0, "d": 1.0, "head_length": 1.0},
    "physics": {"robin_a": 0.5, "end_bc": "robin", "symmetry_split": False},
    "sweep": {"model": "fem2d", "eps": {"start": 0.1, "stop": 0.001, "count": 25}},
    "window": {"lo": -10.0, "hi": 10.0},
    "mesh": {"layers_per_period": 48, "ny": 9, "head_res": 4, "max_aspect": 2.0,
             "min_angle_floor": 15.0},
    "reduced": {"nodes_per_period": 48, "outer_bc": "dirichlet"},
    "solver": {"tol": 1e-8, "dense_threshold": 500},
    "analysis": {"lambda_star": 0.0, "z_cut": 0.5, "stable_tol_frac": 0.01,
                 "min_rate_frac": 0.0125, "gate_frac": 0.1, "tie_tol": 1e-3, "fit_tol": 0.05,
                 "kappa": 0.3, "blink_periods": 5, "eps_seed_max": 0.05},
    "output": {"directory": "out"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``pointer`` is the JSON pointer of the bad field."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.message = message


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


@dataclass(frozen=True)
class RunConfig:
    data: dict

    def __getitem__(self, section: str) -> dict:
        return self.data[section]

    @property
    def eps_values(self) -> list[float]:
        spec = self.data["sweep"]["eps"]
        if isinstance(spec, list):
            return [float(e) for e in spec]
        a, b, n = float(spec["start"]), float(spec["stop"]), int(spec["count"])
        if n == 1:
            return [a]
        t = [math.log(a) + (math.log(b) - math.log(a)) * k / (n - 1) for k in range(n)]
        out = [math.exp(x) for x in t]
        out[0], out[-1] = a, b
        return out

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "RunConfig":
        data = copy.deepcopy(self.data)
        for name, values in sections.items():
            data[name].update(values)
        return from_dict(data)


def defaults() -> RunConfig:
    return RunConfig(copy.deepcopy(DEFAULTS))


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(raw)


def _reject_constant(name):
    raise ConfigError("", f"non-standard JSON constant {name}")


def from_dict(raw: Any) -> RunConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(_pointer(err.absolute_path), err.message)
    data = copy.deepcopy(DEFAULTS)
    for section, values in raw.items():
        if section == "sweep" and "eps" in values:
            data[section]["eps"] = copy.deepcopy(values["eps"])
            values = {k: v for k, v in values.items() if k != "eps"}
        data[section].update(copy.deepcopy(values))
    _check_semantics(data)
    return RunConfig(data)


def _check_semantics(data: dict):
    d = data["geometry"]["d"]
    eps = data["sweep"]["eps"]
    if isinstance(eps, list):
        for i, e in enumerate(eps):
            if not e < d:
                raise ConfigError(f"/sweep/eps/{i}", f"eps must lie in (0, d={d})")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("/sweep/eps", "eps values must be strictly decreasing")
    else:
        for key in ("start", "stop"):
            if not eps[key] < d:
                raise ConfigError(f"/sweep/eps/{key}", f"eps must lie in (0, d={d})")
        if eps["count"] > 1 and not eps["stop"] < eps["start"]:
            raise ConfigError("/sweep/eps/stop", "stop must be smaller than start")
    w = data["window"]
    if not w["lo"] < w["hi"]:
        raise ConfigError("/window/hi", "window requires lo < hi")
    if data["physics"]["symmetry_split"] and data["mesh"]["ny"] % 2 == 0:
        raise ConfigError("/mesh/ny", "symmetry split needs an odd ny")
    if not data["analysis"]["z_cut"] < d:
        raise ConfigError("/analysis/z_cut", "z_cut must lie inside the cusp")
