"""Run configuration: JSON documents validated against a schema."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .coupler import PicardConfig
from .grid import Grid1D, State
from .model import Model, ModelError, initial_from_dict, model_from_dict


class ConfigError(ValueError):
    pass


_LAW = {"type": "object", "required": ["family"]}
_KERNEL = {"type": "object", "required": ["family"]}
_SHAPE = {"oneOf": [{"type": "number"}, {"type": "object", "required": ["shape"]},
                    {"type": "array"}]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["model", "grid", "initial"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "experiment": {"enum": ["simulate", "verify", "example1", "converge"]},
        "model": {
            "type": "object",
            "oneOf": [
                {"required": ["builtin"]},
                {"required": ["kernel", "v_nl", "v_l"]},
            ],
            "properties": {
                "builtin": {"enum": ["gaussian-greenshields", "forward-exponential",
                                     "example1"]},
                "params": {"type": "object"},
                "name": {"type": "string"},
                "kernel": {"oneOf": [_KERNEL, {"type": "array", "items": _KERNEL,
                                               "minItems": 1}]},
                "v_nl": {"oneOf": [_LAW, {"type": "array", "items": _LAW, "minItems": 1}]},
                "v_l": _LAW,
            },
        },
        "grid": {
            "type": "object",
            "required": ["x_min", "x_max"],
            "additionalProperties": False,
            "properties": {
                "x_min": {"type": "number"},
                "x_max": {"type": "number"},
                "n_cells": {"type": "integer", "minimum": 8},
                "dx": {"type": "number", "exclusiveMinimum": 0},
                "aligned": {"type": "boolean"},
            },
            "oneOf": [{"required": ["n_cells"]}, {"required": ["dx"]}],
        },
        "initial": {
            "type": "object",
            "required": ["rho"],
            "properties": {"rho": {"type": "array", "items": _SHAPE, "minItems": 1},
                           "r": _SHAPE},
            "additionalProperties": False,
        },
        "horizon": {"type": "number", "minimum": 0},
        "picard": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "window": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "min_window": {"type": "number", "exclusiveMinimum": 0},
                "contraction_target": {"type": "number", "exclusiveMinimum": 0,
                                       "exclusiveMaximum": 1},
                "stride": {"type": "integer", "minimum": 0},
                "boundary_mass_tol": {"type": "number", "minimum": 0},
                "nonconservative": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
        "example1": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_list": {"type": "array", "items": {"type": "integer", "minimum": 1},
                           "minItems": 1},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "levels": {"type": "integer", "minimum": 3},
                "factor": {"type": "integer", "minimum": 2},
                "mode": {"enum": ["average", "inject"]},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "probe_horizon": {"type": "number", "exclusiveMinimum": 0},
                "random_fields": {"type": "integer", "minimum": 1},
                "cross_solver": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer"},
    },
}


def _csv_paths(entry):
    if isinstance(entry, list):
        for s in entry:
            yield from _csv_paths(s)
    elif isinstance(entry, dict) and entry.get("shape") == "csv":
        yield entry.get("path", "")


@dataclass
class RunConfig:
    doc: dict
    model: Model
    grid: Grid1D
    state0: State
    horizon: float
    picard: PicardConfig
    out_dir: Path
    experiment: str = "simulate"
    seed: int = 0
    base: Path | None = None

    def section(self, name: str) -> dict:
        return dict(self.doc.get(name, {}))

    def with_grid(self, grid: Grid1D) -> "RunConfig":
        """Same run on another grid (initial data resampled)."""
        state0 = build_state(self.doc, grid, self.model, self.base)
        return RunConfig(self.doc, self.model, grid, state0, self.horizon, self.picard,
                         self.out_dir, self.experiment, self.seed, self.base)


def build_grid(d: dict) -> Grid1D:
    if "n_cells" in d:
        return Grid1D(float(d["x_min"]), float(d["x_max"]), int(d["n_cells"]))
    if d.get("aligned", False):
        return Grid1D.aligned(float(d["x_min"]), float(d["x_max"]), float(d["dx"]))
    n = int(round((d["x_max"] - d["x_min"]) / d["dx"]))
    return Grid1D(float(d["x_min"]), float(d["x_max"]), n)


def build_state(doc: dict, grid: Grid1D, model: Model, base: Path | None) -> State:
    datum = initial_from_dict(grid, doc["initial"], model.k, base)
    return State(grid, datum.rho0, datum.r0, 0.0)


def parse_config(doc: dict, base: Path | None = None, out_dir=None,
                 seed: int | None = None) -> RunConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {loc}: {exc.message}") from None
    for p in _csv_paths(doc["initial"].get("rho", [])):
        _require_file(p, base)
    for p in _csv_paths(doc["initial"].get("r", {})):
        _require_file(p, base)
    try:
        model = model_from_dict(doc["model"])
        grid = build_grid(doc["grid"])
        state0 = build_state(doc, grid, model, base)
        picard = PicardConfig(**doc.get("picard", {}))
    except (ModelError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    if out_dir is None:
        out_dir = doc.get("output", {}).get("dir", "out")
    return RunConfig(doc, model, grid, state0, float(doc.get("horizon", 1.0)), picard,
                     Path(out_dir), doc.get("experiment", "simulate"),
                     int(doc.get("seed", 0) if seed is None else seed), base)


def _require_file(p, base):
    path = Path(p)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise ConfigError(f"referenced file does not exist: {path}")


def load_config(path, out_dir=None, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(doc, path.parent, out_dir, seed)


def preset_path(name: str) -> Path:
    from importlib import resources
    p = resources.files("mixedtraffic") / "presets" / f"{name}.json"
    return Path(str(p))


def load_preset(name: str, **kw) -> RunConfig:
    return load_config(preset_path(name), **kw)
