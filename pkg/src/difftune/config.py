"""Run configuration: JSON files over defaults, with dotted-key overrides.

The resolved configuration is a plain nested dict so it can be echoed
back to disk verbatim for exact replay.
"""

from __future__ import annotations

import copy
import json

from .env import EnvConfig
from .losses import LossConfig
from .nn import ConfigError
from .pretrain import PretrainConfig
from .training import TrainConfig

DEFAULTS = {
    "seed": 0,
    "env": {
        "start": [5.0, 0.6],
        "goal_line_y": 9.0,
        "obstacles": [[2.0, 3.8, 0.7], [5.0, 3.8, 0.7], [8.0, 3.8, 0.7],
                      [2.4, 6.2, 0.7], [5.0, 6.2, 0.7], [7.6, 6.2, 0.7]],
        "bounds": [0.0, 0.0, 10.0, 10.0],
        "max_steps": 80,
        "action_clamp": 1.0,
        "reset_jitter_std": 0.1,
        "center_x": 5.0,
    },
    "schedule": {"steps": 20, "beta_start": 0.02, "beta_end": 0.2},
    "policy": {"hidden": [64, 64]},
    "pretrain": {"steps": 20000, "batch_size": 64, "lr": 3e-4, "n_per_mode": 25,
                 "demo_noise_std": 0.05, "eval_episodes": 100},
    "harvest": {"n_winners": 20, "n_losers": 20, "max_attempt_factor": 50},
    "corruption": {"rate": 0.0},
    "loss": {"kind": "robust", "alpha": 1.0, "beta": 0.1, "gamma": 0.0, "nu": 1.0},
    "train": {"epochs": 100, "batch_pairs": 64, "lr": 1e-5, "eval_every": 20,
              "eval_episodes": 100},
    "finetune": {"checkpoint": ""},
    "eval": {"checkpoint": "", "episodes": 100},
    "sweep": {"axis": "corruption", "values": [0.0, 0.2, 0.3], "seeds": [0]},
    "oracle": {"instances": 200, "max_cuts": 10, "gamma": 0.3,
               "grid": {"lows": [-1.0, -1.0], "highs": [1.0, 1.0],
                        "resolution": [201, 201]}},
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def load_config(path=None) -> dict:
    """Defaults deep-merged with an optional JSON config file."""
    cfg = default_config()
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file {path} is not valid JSON: {err}")
        _deep_merge(cfg, user)
    return cfg


def _deep_merge(base: dict, extra: dict) -> None:
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], val)
        else:
            base[key] = val


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply repeatable `--set a.b.c=value` pairs; values parse as JSON
    with a bare-string fallback."""
    for item in assignments or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section {part!r} in override {key!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return cfg


def save_resolved(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- typed builders -----------------------------------------------------------


def env_from(cfg: dict) -> EnvConfig:
    e = cfg["env"]
    env = EnvConfig(start=tuple(e["start"]), goal_line_y=e["goal_line_y"],
                    obstacles=tuple(tuple(o) for o in e["obstacles"]),
                    bounds=tuple(e["bounds"]), max_steps=e["max_steps"],
                    action_clamp=e["action_clamp"],
                    reset_jitter_std=e["reset_jitter_std"], center_x=e["center_x"])
    env.validate()
    return env


def pretrain_from(cfg: dict) -> PretrainConfig:
    p, s = cfg["pretrain"], cfg["schedule"]
    return PretrainConfig(env=env_from(cfg), denoise_steps=s["steps"],
                          beta_start=s["beta_start"], beta_end=s["beta_end"],
                          hidden=tuple(cfg["policy"]["hidden"]), steps=p["steps"],
                          batch_size=p["batch_size"], lr=p["lr"],
                          n_per_mode=p["n_per_mode"],
                          demo_noise_std=p["demo_noise_std"],
                          eval_episodes=p["eval_episodes"], seed=cfg["seed"])


def loss_from(cfg: dict) -> LossConfig:
    l = cfg["loss"]
    return LossConfig(beta=l["beta"], alpha=l["alpha"], gamma=l["gamma"], nu=l["nu"])


def train_from(cfg: dict, kind=None, seed=None) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(kind=kind or cfg["loss"]["kind"], loss=loss_from(cfg),
                       epochs=t["epochs"], batch_pairs=t["batch_pairs"], lr=t["lr"],
                       seed=cfg["seed"] if seed is None else seed,
                       eval_every=t["eval_every"], eval_episodes=t["eval_episodes"])
