"""Run configuration: strict JSON schema, defaults, and desk presets."""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import numpy as np

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_BOOL = {"type": "boolean"}


def _obj(props):
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = _obj(
    {
        "preset": {"type": "string"},
        "system": _obj(
            {
                "name": {"type": "string"},
                "geometry_file": {"type": ["string", "null"]},
                "grid_file": {"type": ["string", "null"]},
                "fix_params": {"type": "object", "additionalProperties": _NUM},
            }
        ),
        "run": _obj(
            {
                "seed": {"type": "integer"},
                "iterations": {"type": "integer", "minimum": 0},
                "output_dir": {"type": "string"},
                "checkpoint_interval": _POS_INT,
                "diagnostics_interval": _POS_INT,
                "precision": {"enum": ["f32", "f64"]},
                "threads": {"type": ["integer", "null"], "minimum": 1},
            }
        ),
        "wavefunction": _obj(
            {
                "single_width": _POS_INT,
                "pair_width": _POS_INT,
                "n_layers": _POS_INT,
                "n_determinants": _POS_INT,
                "n_jastrow_layers": _POS_INT,
                "jastrow_width": _POS_INT,
                "nuclei_embed_dim": _POS_INT,
                "restricted": _BOOL,
                "dense_orbitals": _BOOL,
                "activation": {"enum": ["silu", "tanh"]},
                "activation_rescale": _BOOL,
                "zero_bias_init": _BOOL,
                "envelope_sigma_init": _NUM,
                "frame": {"enum": ["identity", "canonical"]},
            }
        ),
        "metagnn": _obj(
            {
                "enabled": _BOOL,
                "n_message_passes": _POS_INT,
                "node_dim": _POS_INT,
                "message_dim": _POS_INT,
                "n_rbf": _POS_INT,
                "n_sbf": _POS_INT,
                "mlp_depth": _POS_INT,
                "cutoff": _NUM,
            }
        ),
        "mcmc": _obj(
            {
                "steps_between_updates": _POS_INT,
                "init_step_size": _NUM,
                "burn_in": {"type": "integer", "minimum": 0},
            }
        ),
        "optimization": _obj(
            {
                "batch_size": _POS_INT,
                "n_geometry_walkers": _POS_INT,
                "clip_scale": _NUM,
                "cg_steps": _POS_INT,
                "damping_base": _NUM,
                "damping_floor": _NUM,
                "lr0": _NUM,
                "lr_decay": _NUM,
                "max_consecutive_aborts": _POS_INT,
            }
        ),
        "pretraining": _obj(
            {
                "iterations": {"type": "integer", "minimum": 0},
                "learning_rate": _NUM,
                "batch": _POS_INT,
                "mcmc_steps": _POS_INT,
                "provider": {"enum": ["hydrogenic", "file"]},
                "orbital_file": {"type": ["string", "null"]},
            }
        ),
        "surrogate": _obj(
            {
                "enabled": _BOOL,
                "cutoff": _NUM,
                "n_rbf": _POS_INT,
                "n_sbf": _POS_INT,
                "n_blocks": _POS_INT,
                "basis_embed": _POS_INT,
                "interaction_dim": _POS_INT,
                "out_dim": _POS_INT,
                "n_layers_before_skip": _POS_INT,
                "n_layers_after_skip": _POS_INT,
                "n_layers_out": _POS_INT,
                "gamma_base": _NUM,
                "gamma_high": _NUM,
                "zeta": _NUM,
                "n_inner": _POS_INT,
                "ema_decay": _NUM,
                "lr0": _NUM,
                "lr_decay": _NUM,
                "weight_decay": _NUM,
                "sigma_floor": _NUM,
                "init_reference": _BOOL,
            }
        ),
        "evaluation": _obj(
            {
                "n_samples": _POS_INT,
                "burn_in": {"type": "integer", "minimum": 0},
                "batch": _POS_INT,
                "decorrelate": _POS_INT,
            }
        ),
    }
)

DEFAULTS = {
    "system": {"name": "H2", "geometry_file": None, "grid_file": None, "fix_params": {}},
    "run": {
        "seed": 0,
        "iterations": 60000,
        "output_dir": "run",
        "checkpoint_interval": 1000,
        "diagnostics_interval": 100,
        "precision": "f32",
        "threads": None,
    },
    "wavefunction": {
        "single_width": 256,
        "pair_width": 32,
        "n_layers": 4,
        "n_determinants": 16,
        "n_jastrow_layers": 3,
        "jastrow_width": 64,
        "nuclei_embed_dim": 64,
        "restricted": True,
        "dense_orbitals": True,
        "activation": "silu",
        "activation_rescale": True,
        "zero_bias_init": True,
        "envelope_sigma_init": 1.0,
        "frame": "identity",
    },
    "metagnn": {
        "enabled": True,
        "n_message_passes": 2,
        "node_dim": 64,
        "message_dim": 32,
        "n_rbf": 6,
        "n_sbf": 7,
        "mlp_depth": 2,
        "cutoff": 24.0,
    },
    "mcmc": {"steps_between_updates": 40, "init_step_size": 0.02, "burn_in": 400},
    "optimization": {
        "batch_size": 4096,
        "n_geometry_walkers": 16,
        "clip_scale": 5.0,
        "cg_steps": 100,
        "damping_base": 1e-4,
        "damping_floor": 0.0,
        "lr0": 0.1,
        "lr_decay": 1000.0,
        "max_consecutive_aborts": 10,
    },
    "pretraining": {
        "iterations": 2000,
        "learning_rate": 0.003,
        "batch": 256,
        "mcmc_steps": 5,
        "provider": "hydrogenic",
        "orbital_file": None,
    },
    "surrogate": {
        "enabled": True,
        "cutoff": 10.0,
        "n_rbf": 6,
        "n_sbf": 7,
        "n_blocks": 4,
        "basis_embed": 8,
        "interaction_dim": 64,
        "out_dim": 256,
        "n_layers_before_skip": 1,
        "n_layers_after_skip": 2,
        "n_layers_out": 3,
        "gamma_base": 0.99,
        "gamma_high": 0.0099,
        "zeta": 1.05,
        "n_inner": 5,
        "ema_decay": 0.999,
        "lr0": 1e-4,
        "lr_decay": 10000.0,
        "weight_decay": 0.01,
        "sigma_floor": 1e-12,
        "init_reference": True,
    },
    "evaluation": {"n_samples": 1_000_000, "burn_in": 400, "batch": 4096, "decorrelate": 10},
}


class ConfigError(ValueError):
    """Invalid run configuration."""


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_preset(name: str) -> dict:
    try:
        text = resources.files("vmcsurf.cli").joinpath(f"presets/{name}.json").read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"unknown preset {name!r}") from exc
    return json.loads(text)


def validate(config: dict) -> None:
    try:
        jsonschema.validate(config, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config error at '{path}': {exc.message}") from exc


def resolve(user_config: dict) -> dict:
    """Merge defaults, optional preset, and user values; validate strictly."""
    validate(user_config)
    merged = DEFAULTS
    preset_name = user_config.get("preset")
    if preset_name:
        preset = load_preset(preset_name)
        validate(preset)
        merged = _deep_merge(merged, {k: v for k, v in preset.items() if k != "preset"})
    merged = _deep_merge(merged, {k: v for k, v in user_config.items() if k != "preset"})
    validate(merged)
    return merged


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return resolve(raw)


def dump_config(config: dict) -> str:
    return json.dumps(config, indent=2, sort_keys=True)


def dtype_of(config: dict):
    return np.float32 if config["run"]["precision"] == "f32" else np.float64
