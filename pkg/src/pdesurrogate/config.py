"""Flat dotted-key run configuration.

One namespace covers data generation, model, training, evaluation, and
benchmarking; a config file is a flat JSON object from dotted key to
value, and command-line `--set key=value` pairs override file values.
Unknown keys and type mismatches raise ConfigError so typos fail fast
instead of silently training the wrong thing. The fully resolved mapping
is written next to every run's outputs for provenance.
"""

from __future__ import annotations

import json
from pathlib import Path


class ConfigError(Exception):
    pass


# key -> (default, type); None defaults carry their type explicitly
DEFAULTS: dict = {
    "data.kind": ("ns", str),
    "data.count_train": (50, int),
    "data.count_test": (10, int),
    "data.seed": (0, int),
    "data.nx": (32, int),
    "data.ny": (32, int),
    "data.n_frames": (21, int),
    "data.nu_lo": (8e-4, float),
    "data.nu_hi": (1.25e-3, float),
    "data.init_amp": (1.0, float),
    "data.depth_lo": (80.0, float),
    "data.depth_hi": (120.0, float),
    "data.diff_lo": (20.0, float),
    "data.diff_hi": (60.0, float),
    "data.rate_lo": (0.5, float),
    "data.rate_hi": (2.0, float),
    "data.max_sources": (3, int),
    "data.wind_preset": ("off", str),

    "model.d_z": (64, int),
    "model.d_state": (8, int),
    "model.bundle": (1, int),
    "model.grid_h": (32, int),      # overridden by the dataset sidecar when present
    "model.grid_w": (32, int),
    "model.channels": (1, int),
    "model.d_p": (1, int),
    "model.evolution": ("ssm", str),
    "model.mlp_hidden": (None, int),
    "model.d_zp": (None, int),
    "model.static_hidden": (32, int),
    "model.dtype": ("f64", str),
    "model.seed": (0, int),

    "train.epochs": (30, int),
    "train.batch_size": (8, int),
    "train.lr": (2e-3, float),
    "train.starts_per_traj": (16, int),
    "train.max_horizon": (5, int),
    "train.max_grad_norm": (1.0, float),
    "train.lr_decay": ("cosine", str),
    "train.curriculum": ("log", str),
    "train.tau0": (0.3, float),
    "train.poly_p": (2.0, float),
    "train.w_recon": (1.0, float),
    "train.w_consistency": (1.0, float),
    "train.consistency_grad_through_targets": (False, bool),
    "train.checkpoint_every": (10, int),
    "train.divergence_factor": (1e4, float),
    "train.fd_check_every": (0, int),
    "train.seed": (0, int),

    "eval.m": (5, int),
    "eval.start_stride": (1, int),

    "bench.m": (20, int),
    "bench.reps": (50, int),
    "bench.warmup": (10, int),
    "bench.span": ("evolve", str),
}


def default_config() -> dict:
    return {k: v for k, (v, _) in DEFAULTS.items()}


def _coerce(key: str, value, target_type):
    if value is None:
        return None
    if target_type is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if target_type is int:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected int, got bool")
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError as e:
                raise ConfigError(f"{key}: expected int, got {value!r}") from e
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{key}: expected int, got {value!r}")
    if target_type is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected float, got bool")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError as e:
                raise ConfigError(f"{key}: expected float, got {value!r}") from e
    if target_type is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected string, got {value!r}")
    raise ConfigError(f"{key}: unsupported value {value!r}")


def apply_updates(cfg: dict, updates: dict, source: str) -> dict:
    out = dict(cfg)
    for key, value in updates.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} (from {source})")
        out[key] = _coerce(key, value, DEFAULTS[key][1])
    return out


def load_config(path=None, set_args: list | None = None) -> dict:
    """Defaults, then the JSON file, then --set overrides, in that order."""
    cfg = default_config()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = apply_updates(cfg, data, str(p))
    for item in set_args or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg = apply_updates(cfg, {key.strip(): raw.strip()}, "--set")
    return cfg


def write_resolved(cfg: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _prefixed(cfg: dict, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def generate_spec_from(cfg: dict):
    from .pdedata import GenerateSpec
    d = _prefixed(cfg, "data.")
    try:
        return GenerateSpec(**d)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def model_config_from(cfg: dict, dataset_meta: dict | None = None):
    """dataset_meta (the sidecar dict) supplies grid/channel/param shapes."""
    from .model import ModelConfig
    d = _prefixed(cfg, "model.")
    d.pop("seed", None)
    if dataset_meta is not None:
        d["grid_h"] = dataset_meta["ny"]
        d["grid_w"] = dataset_meta["nx"]
        d["channels"] = dataset_meta["channels"]
        d["d_p"] = dataset_meta["d_p"]
    try:
        return ModelConfig(**d)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def train_config_from(cfg: dict):
    from .training import TrainConfig
    try:
        return TrainConfig(**_prefixed(cfg, "train."))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def schedule_spec_from(cfg: dict):
    """Curriculum spec straight from train.* keys; no model stack needed."""
    from .curriculum import ScheduleSpec
    try:
        return ScheduleSpec(kind=cfg["train.curriculum"], tau0=cfg["train.tau0"],
                            n_total=max(cfg["train.epochs"], 1),
                            max_horizon=cfg["train.max_horizon"],
                            p=cfg["train.poly_p"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
