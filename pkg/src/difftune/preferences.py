"""Preference dataset construction: Cartesian pairing of winner/loser
rollouts, exact-count label corruption, and a Bradley-Terry sampler used
by oracle tests.

Ground-truth bookkeeping (the `corrupted` flag) lives only here; losses
receive pairs already resolved to observed order and never see it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import sigmoid
from .env import LEFT, RIGHT, EnvConfig, rollout
from .nn import ConfigError, MlpParams
from .seeding import rng_for


class HarvestError(RuntimeError):
    """Rollout harvesting hit its attempt cap before filling both modes."""


@dataclass(frozen=True)
class PreferencePair:
    winner_id: str
    loser_id: str
    observed_winner_is_first: bool = True
    corrupted: bool = False


@dataclass(frozen=True)
class CorruptionSpec:
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"corruption rate {self.rate} outside [0, 1]")


def pair_cartesian(winner_ids, loser_ids) -> list:
    """All winner x loser pairs with clean observed labels."""
    return [PreferencePair(w, l) for w in winner_ids for l in loser_ids]


def corrupt(pairs, spec: CorruptionSpec) -> list:
    """Invert the observed label of exactly round(rate*N) pairs.

    The flipped subset is uniform without replacement and stable for a
    fixed seed; applying the same spec twice restores the input.
    """
    n_flip = int(round(spec.rate * len(pairs)))
    rng = np.random.default_rng(spec.seed)
    chosen = set(rng.choice(len(pairs), size=n_flip, replace=False)) if n_flip else set()
    return [replace(p, observed_winner_is_first=not p.observed_winner_is_first,
                    corrupted=not p.corrupted) if i in chosen else p
            for i, p in enumerate(pairs)]


def bt_sample(u_w: float, u_l: float, alpha: float, rng: np.random.Generator) -> bool:
    """Bradley-Terry draw: winner preferred with prob sigmoid((u_w-u_l)/alpha)."""
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    return bool(rng.random() < sigmoid(np.asarray((u_w - u_l) / alpha)))


def harvest_preference_rollouts(params: MlpParams, config: EnvConfig, schedule,
                                n_win: int, n_lose: int, seed: int,
                                preferred: str = LEFT, max_attempt_factor: int = 50):
    """Roll the policy until n_win successful preferred-mode and n_lose
    successful other-mode trajectories are collected.

    Returns (store, winner_ids, loser_ids); episode rng streams are
    indexed by attempt, so the result is seed-deterministic.
    """
    other = RIGHT if preferred == LEFT else LEFT
    store, winner_ids, loser_ids = {}, [], []
    cap = max_attempt_factor * (n_win + n_lose)
    for attempt in range(cap):
        if len(winner_ids) >= n_win and len(loser_ids) >= n_lose:
            break
        traj = rollout(params, config, schedule, rng_for(seed, "harvest", attempt))
        if not traj.success:
            continue
        if traj.mode == preferred and len(winner_ids) < n_win:
            tid = f"win-{len(winner_ids):03d}"
            store[tid] = traj
            winner_ids.append(tid)
        elif traj.mode == other and len(loser_ids) < n_lose:
            tid = f"lose-{len(loser_ids):03d}"
            store[tid] = traj
            loser_ids.append(tid)
    if len(winner_ids) < n_win or len(loser_ids) < n_lose:
        raise HarvestError(
            f"hit {cap} attempts with {len(winner_ids)}/{n_win} winners, "
            f"{len(loser_ids)}/{n_lose} losers")
    return store, winner_ids, loser_ids


# -- dataset IO ---------------------------------------------------------------

_PREFLOG_FORMAT = "difftune-preferences"


def save_preferences(path, pairs, trajectory_log: str) -> None:
    """Versioned JSON: pair records referencing ids in a trajectory log."""
    doc = {"format": _PREFLOG_FORMAT, "version": 1, "trajectory_log": trajectory_log,
           "pairs": [{"winner_id": p.winner_id, "loser_id": p.loser_id,
                      "observed_winner_is_first": p.observed_winner_is_first,
                      "corrupted": p.corrupted} for p in pairs]}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_preferences(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _PREFLOG_FORMAT or doc.get("version") != 1:
        raise ConfigError(f"not a v1 difftune preference file: {path}")
    pairs = [PreferencePair(r["winner_id"], r["loser_id"],
                            r["observed_winner_is_first"], r["corrupted"])
             for r in doc["pairs"]]
    return pairs, doc["trajectory_log"]
