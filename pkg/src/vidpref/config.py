"""Pipeline configuration: defaults, YAML loading, per-module views.

Config files are YAML with one section per module; every key below has a
default, so an empty (or absent) file runs the stock pipeline.  Unknown
keys are rejected to catch typos early.
"""

from __future__ import annotations

import copy
from typing import Any, Mapping

import numpy as np
import yaml

from .errors import ConfigurationError
from .hpo import HpoConfig
from .selection import SelectionConfig
from .world import WorldConfig

CONFIG_FORMAT = "magicid-config/1"

DEFAULTS: dict[str, Any] = {
    "version": CONFIG_FORMAT,
    "seed": 0,
    "world": {
        "frame_dim": 12,
        "identity_dim": 4,
        "motion_dim": 4,
        "noise_sigma": 0.02,
        "frames": 4,
        "reference_count": 3,
        "prompt_count": 20,
    },
    "rewards": {
        # reserved: custom scorers plug in through the library API
    },
    "repo": {
        "n_finetuned": 100,
        "n_initial": 20,
    },
    "select": {
        "theta_id": 3.0,
        "tau_dy": 2.0,
        "top_k": 100,
    },
    "diffusion": {
        "timesteps": 100,
        "beta_min": 1.0e-4,
        "beta_max": 0.02,
        "hidden_dim": 192,
        "adapter_rank": 0,  # 0 disables the low-rank adapter
        "pretrain_steps": 200000,
        "pretrain_corpus": 100,
        "init_steps": 1000,
        "lr": 2.0e-3,  # rescaled for the toy network; see README
        "weight_decay": 1.0e-4,
        "cond_dropout": 0.1,
        "sampler_steps": 50,
        "guidance_scale": 1.0,
    },
    "hpo": {
        "beta_dpo": 5.0,
        "steps": 5000,
        "lr": 1.0e-4,
        "weight_decay": 1.0e-4,
        "curriculum": False,
        "shared_t": True,
    },
    "eval": {
        "lengths": [8, 16, 32, 64],
        "checkpoint_every": 500,
        "n_samples": 24,
    },
}


def _merge(base: dict, override: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigurationError(f"config key {dotted!r} must be a section")
            out[key] = _merge(base[key], value, path=f"{dotted}.")
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict[str, Any]:
    """Read a YAML config file and merge it over the defaults."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path, "r", encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh)
    if loaded is None:
        return copy.deepcopy(DEFAULTS)
    if not isinstance(loaded, Mapping):
        raise ConfigurationError(f"config file {path} must contain a mapping")
    return _merge(DEFAULTS, loaded)


def derive_seed(master: int, stream: int) -> int:
    """A stable per-stage sub-seed so stages draw from independent streams."""
    return int(np.random.default_rng([int(master), int(stream)]).integers(0, 2**31 - 1))


def world_config(cfg: Mapping[str, Any], seed: int) -> WorldConfig:
    w = cfg["world"]
    return WorldConfig(
        frame_dim=w["frame_dim"],
        identity_dim=w["identity_dim"],
        motion_dim=w["motion_dim"],
        noise_sigma=w["noise_sigma"],
        seed=seed,
    )


def selection_config(cfg: Mapping[str, Any]) -> SelectionConfig:
    s = cfg["select"]
    return SelectionConfig(theta_id=s["theta_id"], tau_dy=s["tau_dy"], top_k=s["top_k"])


def hpo_config(cfg: Mapping[str, Any], rng_seed: int) -> HpoConfig:
    h = cfg["hpo"]
    return HpoConfig(
        beta_dpo=h["beta_dpo"],
        steps=h["steps"],
        lr=h["lr"],
        weight_decay=h["weight_decay"],
        curriculum=h["curriculum"],
        shared_t=h["shared_t"],
        rng_seed=rng_seed,
    )
