"""JSON experiment configuration: schema validation and system construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .gaussian import NoiseCovariance, ValidationError
from .harness import Phase, Schedule, phase_schedule
from .model import MarkovModePrior, ModeModel, SwitchingSystem, validate
from .scenarios import (
    ContactToyParams,
    aircraft_tracking,
    contact_toy,
    lane_change,
    synthetic_base_motion,
)


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}
_opt_int = {"type": ["integer", "null"], "minimum": 1}

_SYSTEM_SCHEMAS: dict[str, dict] = {
    "aircraft": {
        "T": {"type": "number", "exclusiveMinimum": 0},
        "ct_controls": _mat,
        "noise_scale": {"type": "number", "minimum": 0},
        "self_transition": {"type": "number", "minimum": 0, "maximum": 1},
        "x0_mean": _vec,
        "x0_std": {"type": "number", "exclusiveMinimum": 0},
    },
    "lane_change": {
        "T": {"type": "number", "exclusiveMinimum": 0},
        "sigma_ct": _num,
        "sigma_cv": _num,
        "sigma_meas": _num,
        "self_transition": {"type": "number", "minimum": 0, "maximum": 1},
        "x0_mean": _vec,
        "x0_std": _vec,
    },
    "contact": {
        "mu_contact": _vec,
        "sigma_contact": _mat,
        "mu_swing": _vec,
        "sigma_swing": _mat,
        "meas_cov": _mat,
        "self_transition": {"type": "number", "minimum": 0, "maximum": 1},
        "x0_mean": _vec,
        "x0_cov": _mat,
        "base_speed": _num,
        "base_yaw_rate": _num,
        "base_translation": _mat,
        "base_rotation": {"type": "array", "items": _mat},
    },
    "custom": {
        "modes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["label", "F", "Q"],
                "properties": {
                    "label": {"type": "string"},
                    "F": _mat, "B": _mat, "u": {"type": "array"},
                    "Q": _mat, "H": _mat, "R": _mat,
                },
            },
        },
        "initial": _vec,
        "transition": _mat,
        "x0_mean": _vec,
        "x0_cov": _mat,
    },
}

_REQUIRED = {"custom": ["modes", "initial", "transition", "x0_mean", "x0_cov"]}

TOP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "system": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": sorted(_SYSTEM_SCHEMAS)}},
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "phases": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["mode", "duration"],
                        "properties": {
                            "mode": {"type": "string"},
                            "duration": {"type": "integer", "minimum": 1},
                            "control": _vec,
                        },
                    },
                },
            },
        },
        "smoother": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "theta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "lag": _opt_int,
                "leaf_cap": _opt_int,
                "marginalization": {"enum": ["lag", "last_fork"]},
                "evidence": {"enum": ["joint", "terminal"]},
            },
        },
        "input": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "measurement_columns": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "mode_column": {"type": ["string", "null"]},
            },
        },
    },
}


def _path(prefix: str, error: jsonschema.ValidationError) -> str:
    parts = [prefix] if prefix else []
    for p in error.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else str(p))
    out = ".".join(parts).replace(".[", "[")
    return out or "<root>"


def _check(instance: Any, schema: dict, prefix: str = "") -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_path(prefix, e)}: {e.message}" for e in errors))


@dataclass
class ExperimentConfig:
    raw: dict
    system: SwitchingSystem
    steps: Optional[int]
    seed: int
    schedule: Optional[Schedule]
    theta: float
    lag: Optional[int]
    leaf_cap: Optional[int]
    marginalization: str
    evidence: str
    measurement_columns: Optional[list[str]]
    mode_column: Optional[str]


def _custom_system(spec: dict) -> SwitchingSystem:
    modes = []
    for i, m in enumerate(spec["modes"]):
        try:
            modes.append(ModeModel(
                m["label"],
                np.array(m["F"], dtype=float),
                NoiseCovariance(np.array(m["Q"], dtype=float)),
                None if "B" not in m else np.array(m["B"], dtype=float),
                None if "u" not in m else np.array(m["u"], dtype=float),
                None if "H" not in m else np.array(m["H"], dtype=float),
                None if "R" not in m else NoiseCovariance(np.array(m["R"], dtype=float)),
            ))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"system.modes[{i}]: {exc}") from None
    return SwitchingSystem(
        modes,
        MarkovModePrior(spec["initial"], spec["transition"]),
        np.array(spec["x0_mean"], dtype=float),
        NoiseCovariance(np.array(spec["x0_cov"], dtype=float)),
    )


def build_system(spec: dict, steps: Optional[int] = None) -> SwitchingSystem:
    kind = spec["type"]
    params = {k: v for k, v in spec.items() if k != "type"}
    if kind == "aircraft":
        return aircraft_tracking(**params)
    if kind == "lane_change":
        return lane_change(**params)
    if kind == "contact":
        speed = params.pop("base_speed", 0.05)
        yaw_rate = params.pop("base_yaw_rate", 0.01)
        arrays = {k: np.array(v, dtype=float) for k, v in params.items()
                  if k != "self_transition"}
        p = ContactToyParams(**arrays)
        if "self_transition" in params:
            p.self_transition = params["self_transition"]
        if p.base_translation is None:
            p.base_translation, p.base_rotation = synthetic_base_motion(
                steps or 2, speed, yaw_rate
            )
        return contact_toy(p)
    return _custom_system(spec)


def parse_config(raw: dict) -> ExperimentConfig:
    _check(raw, TOP_SCHEMA)
    spec = raw["system"]
    kind = spec["type"]
    sys_schema = {
        "type": "object",
        "additionalProperties": False,
        "required": ["type", *_REQUIRED.get(kind, [])],
        "properties": {"type": {"const": kind}, **_SYSTEM_SCHEMAS[kind]},
    }
    _check(spec, sys_schema, "system")
    sim = raw.get("simulation", {})
    sm = raw.get("smoother", {})
    inp = raw.get("input", {})
    steps = sim.get("steps")
    phases = sim.get("phases")
    if phases is not None:
        total = sum(p["duration"] for p in phases) + 1
        if steps is not None and steps != total:
            raise ConfigError(
                f"simulation.steps: {steps} disagrees with phases (durations sum + 1 = {total})"
            )
        steps = total
    try:
        system = build_system(spec, steps)
        problems = validate(system)
        if problems:
            raise ConfigError("; ".join(f"system.{p}" for p in problems))
        schedule = None
        if phases is not None:
            schedule = phase_schedule(system, [
                Phase(p["mode"], p["duration"],
                      None if "control" not in p else tuple(p["control"]))
                for p in phases
            ])
    except (ValidationError, TypeError) as exc:
        raise ConfigError(f"system: {exc}") from None
    return ExperimentConfig(
        raw=raw,
        system=system,
        steps=steps,
        seed=sim.get("seed", 0),
        schedule=schedule,
        theta=sm.get("theta", 0.01),
        lag=sm.get("lag"),
        leaf_cap=sm.get("leaf_cap"),
        marginalization=sm.get("marginalization", "lag"),
        evidence=sm.get("evidence", "joint"),
        measurement_columns=inp.get("measurement_columns"),
        mode_column=inp.get("mode_column", "mode"),
    )


def load_config(path: Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
