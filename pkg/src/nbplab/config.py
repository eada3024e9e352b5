"""Experiment configuration: JSON schema, validation and model construction.

Every number in a config file is a decimal string. Strings are parsed to
floats exactly once, here, so the SHA-256 of the file bytes pins the run.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .cross_sections import (CrossSectionModel, DiscreteScatter, IIDFission, IsotropicScatter, ShellZones,
                             SlabZones, TabulatedFission, gw3_model, rod_model)
from .phase_space import domain_from_dict, velocities_from_dict

KINDS = ("validate", "eigen", "extinction", "simulate", "skeleton", "reconstruct", "slln", "bbm")

# Blocks each kind reads. "run" is always required because it carries the seed.
REQUIRED_BLOCKS = {
    "validate": ("model",),
    "eigen": ("model", "grid"),
    "extinction": ("model", "grid"),
    "simulate": ("model",),
    "skeleton": ("model", "grid"),
    "reconstruct": ("model", "grid"),
    "slln": ("model", "grid"),
    "bbm": ("strip",),
}
RUN_FIELDS = {
    "validate": (),
    "eigen": (),
    "extinction": (),
    "simulate": ("replicates", "horizon"),
    "skeleton": ("replicates", "horizon"),
    "reconstruct": ("replicates", "horizon"),
    "slln": ("replicates", "horizon"),
    "bbm": ("replicates", "horizon"),
}

_NUM = {"type": "string", "pattern": r"^[-+]?([0-9]+(\.[0-9]*)?|\.[0-9]+)([eE][-+]?[0-9]+)?$"}
_UINT = {"type": "string", "pattern": r"^[0-9]+$"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_CUBE = {"type": "array", "items": _MAT, "minItems": 1}


def _closed(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_DOMAIN = {"oneOf": [
    _closed({"type": {"const": "interval"}, "a": _NUM, "b": _NUM}, ["type", "a", "b"]),
    _closed({"type": {"const": "box"}, "lo": _VEC, "hi": _VEC}, ["type", "lo", "hi"]),
    _closed({"type": {"const": "ball"}, "center": _VEC, "radius": _NUM}, ["type", "center", "radius"]),
]}
_VELOCITIES = {"oneOf": [
    _closed({"type": {"const": "discrete"}, "values": _MAT}, ["type", "values"]),
    _closed({"type": {"const": "annulus"}, "v_min": _NUM, "v_max": _NUM, "dim": _UINT},
            ["type", "v_min", "v_max"]),
]}
_OUTCOME = _closed({"p": _NUM, "children": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
                   ["p", "children"])
_MODEL_FULL = _closed({
    "name": {"type": "string"},
    "zones": {"oneOf": [
        _closed({"type": {"const": "slabs"}, "edges": _VEC, "axis": _UINT}, ["type", "edges"]),
        _closed({"type": {"const": "shells"}, "center": _VEC, "radii": _VEC}, ["type", "center", "radii"]),
    ]},
    "sigma_s": _MAT,
    "sigma_f": _MAT,
    "speed_edges": _VEC,
    "scatter": {"oneOf": [
        _closed({"type": {"const": "table"}, "matrix": _CUBE}, ["type", "matrix"]),
        _closed({"type": {"const": "isotropic"}}, ["type"]),
    ]},
    "fission": {"oneOf": [
        _closed({"type": {"const": "iid"}, "counts": {"oneOf": [_VEC, _CUBE]}, "emission": _CUBE},
                ["type", "counts"]),
        _closed({"type": {"const": "tabulated"},
                 "table": {"type": "array", "items": {"type": "array", "items": {
                     "type": "array", "items": _OUTCOME, "minItems": 1}}}}, ["type", "table"]),
    ]},
}, ["zones", "sigma_s", "sigma_f", "scatter", "fission"])
_MODEL_PRESET = _closed({
    "preset": {"enum": ["rod", "gw3"]},
    "length": _NUM, "sigma_s": _NUM, "sigma_f": _NUM, "speed": _NUM,
    "counts": _VEC, "scatter": {"enum": ["flip", "isotropic"]},
}, ["preset"])

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nbplab experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "run"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "description": {"type": "string"},
        "geometry": _closed({"domain": _DOMAIN, "velocities": _VELOCITIES}, ["domain", "velocities"]),
        "model": {"oneOf": [_MODEL_FULL, _MODEL_PRESET]},
        "grid": _closed({"n_cells": _UINT, "tol": _NUM, "refine": {"type": "boolean"}}, ["n_cells"]),
        "run": _closed({
            "seed": _UINT,
            "replicates": _UINT,
            "horizon": _NUM,
            "checkpoints": _VEC,
            "scheme": {"enum": ["collision", "fission"]},
            "start": {"oneOf": [
                _closed({"r": _VEC, "v": _VEC}, ["r", "v"]),
                _closed({"density": {"const": "phi_tilde"}}, ["density"]),
            ]},
            "burn_in": _NUM,
            "cap": _UINT,
            "fission_samples": _UINT,
        }, ["seed"]),
        "strip": _closed({"K": _NUM, "mu": _NUM, "rate": _NUM, "probs": _VEC,
                          "plateau_K": _NUM, "plateau_probs": _VEC}, ["K", "mu", "rate", "probs"]),
    },
}


class ConfigError(ValueError):
    """Schema or consistency violation; carries a list of diagnostics."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    raw: dict
    sha256: str
    model: CrossSectionModel | None = None
    n_cells: int | None = None
    grid_tol: float = 1e-8
    refine: bool = True
    replicates: int = 0
    horizon: float = 0.0
    checkpoints: tuple[float, ...] = ()
    scheme: str = "collision"
    start: dict | None = None
    burn_in: float | None = None
    cap: int = 1_000_000
    fission_samples: int = 20_000
    strip: dict | None = None
    spaceless: bool = False  # GW3 preset: survival and growth come from closed forms

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, seed=int(seed))


def _f(x) -> float:
    return float(x)


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def build_model(model: dict, geometry: dict | None) -> CrossSectionModel:
    """Model from a validated model block (and geometry block unless preset)."""
    if "preset" in model:
        if model["preset"] == "gw3":
            return gw3_model(_f(model.get("length", "1e6")))
        kw = {}
        for key in ("sigma_s", "sigma_f", "speed"):
            if key in model:
                kw[key] = _f(model[key])
        if "counts" in model:
            kw["counts"] = tuple(map(_f, model["counts"]))
        if "scatter" in model:
            kw["scatter"] = model["scatter"]
        return rod_model(_f(model.get("length", "8")), **kw)
    if geometry is None:
        raise ConfigError(["a full model block needs a geometry block"])
    dom = domain_from_dict(geometry["domain"])
    vel = velocities_from_dict(geometry["velocities"])
    z = model["zones"]
    zones = (SlabZones(tuple(map(_f, z["edges"])), int(z.get("axis", "0"))) if z["type"] == "slabs"
             else ShellZones(tuple(map(_f, z["center"])), tuple(map(_f, z["radii"]))))
    sc = model["scatter"]
    scatter = DiscreteScatter(_arr(sc["matrix"])) if sc["type"] == "table" else IsotropicScatter()
    fi = model["fission"]
    ss, sf = _arr(model["sigma_s"]), _arr(model["sigma_f"])
    if fi["type"] == "iid":
        counts = _arr(fi["counts"])
        if counts.ndim == 1:
            counts = np.broadcast_to(counts, ss.shape + counts.shape).copy()
        emission = _arr(fi["emission"]) if "emission" in fi else None
        fission = IIDFission(counts, emission, None if emission is not None else vel)
    else:
        table = tuple(tuple(tuple((_f(o["p"]), tuple(o["children"])) for o in cell) for cell in row)
                      for row in fi["table"])
        fission = TabulatedFission(table, len(geometry["velocities"]["values"]))
    edges = tuple(map(_f, model["speed_edges"])) if "speed_edges" in model else None
    return CrossSectionModel(dom, vel, zones, ss, sf, scatter, fission, speed_edges=edges,
                             name=model.get("name", "model"))


def parse_config(data: bytes | str | dict) -> ExperimentConfig:
    """Validate and parse; raises ConfigError with every diagnostic found."""
    if isinstance(data, dict):
        raw_bytes = json.dumps(data, sort_keys=True).encode()
        obj = data
    else:
        raw_bytes = data.encode() if isinstance(data, str) else data
        try:
            obj = json.loads(raw_bytes)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    problems = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
    if problems:
        raise ConfigError(problems)
    kind = obj["kind"]
    spaceless = obj.get("model", {}).get("preset") == "gw3"
    for block in REQUIRED_BLOCKS[kind]:
        if block == "grid" and spaceless and kind in ("skeleton", "reconstruct"):
            continue
        if block not in obj:
            problems.append(f"kind {kind!r} needs a {block!r} block")
    for key in RUN_FIELDS[kind]:
        if key not in obj["run"]:
            problems.append(f"kind {kind!r} needs run/{key}")
    if "model" in obj and "preset" not in obj["model"] and "geometry" not in obj:
        problems.append("a full model block needs a geometry block")
    if problems:
        raise ConfigError(problems)

    run = obj["run"]
    cfg = ExperimentConfig(kind=kind, seed=int(run["seed"]), raw=obj,
                           sha256=hashlib.sha256(raw_bytes).hexdigest())
    if "model" in obj and kind != "bbm":
        try:
            cfg.model = build_model(obj["model"], obj.get("geometry"))
        except (ValueError, KeyError) as exc:
            raise ConfigError([f"model: {exc}"]) from None
    if "grid" in obj:
        cfg.n_cells = int(obj["grid"]["n_cells"])
        cfg.grid_tol = _f(obj["grid"].get("tol", "1e-8"))
        cfg.refine = bool(obj["grid"].get("refine", True))
    cfg.replicates = int(run.get("replicates", "0"))
    cfg.horizon = _f(run.get("horizon", "0"))
    cps = sorted(set(map(_f, run.get("checkpoints", []))) | ({0.0, cfg.horizon} if cfg.horizon else set()))
    if cps and (cps[0] < 0 or cps[-1] > cfg.horizon):
        raise ConfigError(["run/checkpoints must lie in [0, horizon]"])
    cfg.checkpoints = tuple(cps)
    cfg.scheme = run.get("scheme", "collision")
    if "start" in run:
        st = run["start"]
        cfg.start = ({"density": "phi_tilde"} if "density" in st
                     else {"r": tuple(map(_f, st["r"])), "v": tuple(map(_f, st["v"]))})
    cfg.burn_in = _f(run["burn_in"]) if "burn_in" in run else None
    cfg.cap = int(run.get("cap", "1000000"))
    cfg.fission_samples = int(run.get("fission_samples", "20000"))
    if "strip" in obj:
        s = obj["strip"]
        cfg.strip = {"K": _f(s["K"]), "mu": _f(s["mu"]), "rate": _f(s["rate"]),
                     "probs": tuple(map(_f, s["probs"])),
                     "plateau_K": _f(s["plateau_K"]) if "plateau_K" in s else None,
                     "plateau_probs": tuple(map(_f, s.get("plateau_probs", s["probs"])))}
    cfg.spaceless = spaceless
    if kind in ("slln", "skeleton", "reconstruct", "eigen", "extinction") and cfg.model is not None:
        if not (cfg.model.discrete and cfg.model.domain.dim == 1):
            raise ConfigError([f"kind {kind!r} needs a rod model (interval domain, discrete velocities)"])
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError([f"cannot read config: {exc}"]) from None
    return parse_config(data)
