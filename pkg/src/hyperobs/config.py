"""Experiment configuration: JSON schema, validation, and object builders.

A config file fully determines one experiment: the hypergraph (inline, from a
file, or generated), the node dynamics, the observer-design options, the
simulation protocol, and an optional batch sweep.  Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import jsonschema
import numpy as np

from .designer import DesignOptions
from .dynamics import (
    NetworkSystem,
    bistable_field,
    identity_output,
    linear_coupling,
    linear_output,
    lorenz_field,
    tanh_coupling,
)
from .hypergraph import DirectedHypergraph, HierarchicalGenSpec, generate_hierarchical
from .sim import SimConfig, TrajectoryEnsembleSpec


class ConfigError(ValueError):
    pass


_BOX = {
    "type": "array",
    "items": {"type": "number"},
    "minItems": 2,
    "maxItems": 2,
}

_GENERATOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["layer_sizes", "cardinality", "src_intra", "snk_intra",
                 "src_inter", "snk_inter", "seed"],
    "properties": {
        "layer_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "cardinality": {"type": "integer", "minimum": 2},
        "src_intra": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "snk_intra": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "src_inter": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "snk_inter": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "seed": {"type": "integer"},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
    },
}

_HYPEREDGE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["tails", "heads", "alpha", "beta"],
    "properties": {
        "tails": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "heads": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "alpha": {"type": "array", "items": {"type": "number"}},
        "beta": {"type": "array", "items": {"type": "number"}},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
    },
}

_HYPERGRAPH_INLINE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["num_nodes", "edges"],
    "properties": {
        "num_nodes": {"type": "integer", "minimum": 0},
        "edges": {"type": "array", "items": _HYPEREDGE_SCHEMA},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["hypergraph", "dynamics", "design", "sim"],
    "properties": {
        "name": {"type": "string"},
        "hypergraph": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "file": {"type": "string"},
                "inline": _HYPERGRAPH_INLINE_SCHEMA,
                "generator": _GENERATOR_SCHEMA,
            },
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "required": ["field", "coupling", "output"],
            "properties": {
                "field": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["name", "params"],
                    "properties": {
                        "name": {"enum": ["lorenz", "bistable"]},
                        "params": {"type": "array", "items": {"type": "number"}},
                    },
                },
                "coupling": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["name", "params"],
                    "properties": {
                        "name": {"enum": ["tanh", "linear"]},
                        "params": {"type": "array", "items": {"type": "number"}},
                    },
                },
                "output": {
                    "type": "object",
                    "additionalProperties": False,
                    "minProperties": 1,
                    "maxProperties": 1,
                    "properties": {
                        "identity": {"const": True},
                        "matrix": {
                            "type": "array",
                            "items": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                },
            },
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "required": ["margin", "trajectories"],
            "properties": {
                "margin": {"type": "number", "exclusiveMinimum": 0},
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "eps_req": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "kron_cap": {"type": "integer", "minimum": 1},
                "use_inverse_shortcut": {"type": ["boolean", "null"]},
                "thm1_fallback": {"type": "boolean"},
                "thm1_placement": {"type": "boolean"},
                "max_iters": {"type": "integer", "minimum": 1},
                "restarts": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "trajectories": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["count", "horizon", "dt"],
                    "properties": {
                        "count": {"type": "integer", "minimum": 1},
                        "horizon": {"type": "number", "exclusiveMinimum": 0},
                        "dt": {"type": "number", "exclusiveMinimum": 0},
                        "subsample": {"type": "integer", "minimum": 1},
                        "box": _BOX,
                        "seed": {"type": "integer"},
                        "burn_in": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt", "horizon", "runs"],
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "runs": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "x0_box": _BOX,
                "observer_init_width": {"type": "number", "minimum": 0},
                "noise": {"type": "number", "minimum": 0},
                "param_spread": {"type": "number", "minimum": 0},
                "downsample_rows": {"type": "integer", "minimum": 2},
            },
        },
        "batch": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variable", "values"],
            "properties": {
                "variable": {"enum": ["observer_init_width", "noise", "param_spread"]},
                "values": {
                    "type": "array",
                    "items": {"type": "number", "minimum": 0},
                    "minItems": 1,
                },
            },
        },
    },
}


def validate_config(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    return doc


def load_config(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(doc)


def resolve_hypergraph(doc: dict, base_dir: Path, seed_override: int | None = None) -> DirectedHypergraph:
    section = doc["hypergraph"]
    if "file" in section:
        path = Path(section["file"])
        if not path.is_absolute():
            path = base_dir / path
        try:
            return DirectedHypergraph.from_json(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read hypergraph file {path}: {exc}") from exc
    if "inline" in section:
        return DirectedHypergraph.from_json_dict(section["inline"])
    spec_doc = dict(section["generator"])
    if seed_override is not None:
        spec_doc["seed"] = seed_override
    return generate_hierarchical(HierarchicalGenSpec.from_json_dict(spec_doc))


def build_system(doc: dict, hypergraph: DirectedHypergraph) -> NetworkSystem:
    dyn = doc["dynamics"]
    fname, fparams = dyn["field"]["name"], dyn["field"]["params"]
    if fname == "lorenz":
        if len(fparams) != 3:
            raise ConfigError("lorenz field takes 3 parameters")
        field = lorenz_field(*fparams)
    else:
        if len(fparams) != 2:
            raise ConfigError("bistable field takes 2 parameters")
        field = bistable_field(*fparams)
    n = field.state_dim
    cname, cparams = dyn["coupling"]["name"], dyn["coupling"]["params"]
    if cname == "tanh":
        if len(cparams) != 3:
            raise ConfigError("tanh coupling takes 3 parameters")
        coupling = tanh_coupling(*cparams, n)
    else:
        if len(cparams) != 1:
            raise ConfigError("linear coupling takes 1 parameter")
        coupling = linear_coupling(cparams[0], n)
    out = dyn["output"]
    output = identity_output(n) if "identity" in out else linear_output(out["matrix"])
    if output.state_dim != n:
        raise ConfigError("output matrix width must match the node state dimension")
    return NetworkSystem(hypergraph, field, coupling, output)


def build_design_options(doc: dict, seed_override: int | None = None) -> DesignOptions:
    d = doc["design"]
    return DesignOptions(
        margin=d["margin"],
        rho=d.get("rho", 10.0),
        eps_req=d.get("eps_req", 0.5),
        kron_cap=d.get("kron_cap", 40),
        use_inverse_shortcut=d.get("use_inverse_shortcut"),
        thm1_fallback=d.get("thm1_fallback", True),
        thm1_placement=d.get("thm1_placement", False),
        max_iters=d.get("max_iters", 5000),
        restarts=d.get("restarts", 3),
        seed=seed_override if seed_override is not None else d.get("seed", 0),
    )


def build_ensemble_spec(doc: dict) -> TrajectoryEnsembleSpec:
    t = doc["design"]["trajectories"]
    return TrajectoryEnsembleSpec(
        count=t["count"],
        horizon=t["horizon"],
        dt=t["dt"],
        subsample=t.get("subsample", 5),
        box=tuple(t.get("box", (-3.0, 3.0))),
        seed=t.get("seed", 0),
        burn_in=t.get("burn_in", 0.0),
    )


def build_sim_config(doc: dict, seed: int | None = None, **overrides) -> SimConfig:
    s = doc["sim"]
    kwargs = dict(
        dt=s["dt"],
        horizon=s["horizon"],
        seed=s.get("seed", 0) if seed is None else seed,
        noise_amplitude=s.get("noise", 0.0),
        param_rel_spread=s.get("param_spread", 0.0),
        x0_box=tuple(s.get("x0_box", (-3.0, 3.0))),
        observer_init_width=s.get("observer_init_width", 0.2),
    )
    kwargs.update(overrides)
    return SimConfig(**kwargs)


def design_relevant_hash(doc: dict, hypergraph: DirectedHypergraph) -> str:
    """Hash of the sections a design depends on, with the hypergraph resolved
    so file-based and inline configs compare by content."""
    payload = {
        "hypergraph": hypergraph.to_json_dict(),
        "dynamics": doc["dynamics"],
        "design": doc["design"],
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
