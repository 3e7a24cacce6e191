"""Scripted bimodal demonstrators and behavior-cloning pretraining.

The demonstrators are proportional controllers tracking per-mode
waypoints through the left or right corridor of the obstacle field,
with a little Gaussian action noise. Pretraining fits the noise
predictor to the injected forward-process noise on the demo corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from .diffusion import NoiseSchedule, forward_noise, make_schedule, predictor_in_dim
from .env import LEFT, RIGHT, EnvConfig, env_reset, env_step
from .nn import MlpParams, adam_init, adam_step, grad_scalar, init_mlp, mlp_apply
from .seeding import rng_for


class GenerationError(RuntimeError):
    """A scripted demonstrator produced a failed episode (fixture bug)."""


class PretrainingFailedError(RuntimeError):
    """Pretrained policy collapsed to one behavior mode."""

    def __init__(self, message, metrics=None):
        super().__init__(message)
        self.metrics = metrics


@dataclass
class DemoEpisode:
    steps: list  # [(state, executed action, next_state), ...]
    mode: str

    def positions(self) -> np.ndarray:
        pts = [st[0][:2] for st in self.steps] + [self.steps[-1][2][:2]]
        return np.stack(pts)


@dataclass
class DemoSet:
    episodes: list = field(default_factory=list)

    @property
    def states(self) -> np.ndarray:
        return np.stack([s for ep in self.episodes for (s, _, _) in ep.steps])

    @property
    def actions(self) -> np.ndarray:
        return np.stack([a for ep in self.episodes for (_, a, _) in ep.steps])

    def mode_counts(self) -> dict:
        out = {LEFT: 0, RIGHT: 0}
        for ep in self.episodes:
            out[ep.mode] = out.get(ep.mode, 0) + 1
        return out


def demo_waypoints(config: EnvConfig, mode: str, corridor_offset: float = 1.3):
    """Waypoint ladder through the requested corridor."""
    cx = config.center_x + (corridor_offset if mode == RIGHT else -corridor_offset)
    top_row_y = max(cy for _, cy, _ in config.obstacles)
    return [
        np.array([cx, config.first_row_y - 1.6]),
        np.array([cx, top_row_y + 1.0]),
        np.array([config.center_x, config.goal_line_y + 0.5]),
    ]


def _scripted_episode(config: EnvConfig, mode: str, rng: np.random.Generator,
                      noise_std: float, gain: float = 1.0, reach_tol: float = 0.4):
    waypoints = demo_waypoints(config, mode)
    s = env_reset(config, rng)
    wp = 0
    steps = []
    for _ in range(config.max_steps):
        pos = s[:2]
        while wp < len(waypoints) - 1 and np.linalg.norm(waypoints[wp] - pos) < reach_tol:
            wp += 1
        raw = gain * (waypoints[wp] - pos) + noise_std * rng.standard_normal(2)
        action = np.clip(raw, -config.action_clamp, config.action_clamp)
        next_s, collided, reached = env_step(s, action, config)
        steps.append((s, action, next_s))
        s = next_s
        if collided or reached:
            return DemoEpisode(steps, mode), reached and not collided
    return DemoEpisode(steps, mode), False


def generate_demos(config: EnvConfig, n_per_mode: int, rng: np.random.Generator,
                   noise_std: float = 0.05) -> DemoSet:
    """Balanced successful demonstrations for both corridor modes."""
    if n_per_mode < 1:
        raise GenerationError("n_per_mode must be >= 1")
    demos = DemoSet()
    for mode in (LEFT, RIGHT):
        for i in range(n_per_mode):
            ep, ok = _scripted_episode(config, mode, rng, noise_std)
            got = envmod.classify_mode(_as_trajectory(ep), config)
            if not ok or got != mode:
                raise GenerationError(
                    f"scripted {mode} demo {i} failed (success={ok}, classified={got})")
            demos.episodes.append(ep)
    return demos


def _as_trajectory(ep: DemoEpisode) -> envmod.Trajectory:
    # Chains are irrelevant for classification; wrap the executed action.
    steps = [envmod.TrajStep(s, envmod.DenoiseChain(states=[a], s=s), ns)
             for (s, a, ns) in ep.steps]
    return envmod.Trajectory(steps=steps, reached=True)


# -- behavior-cloning loss -------------------------------------------------


def bc_loss_terms(theta, sizes, states: np.ndarray, actions: np.ndarray,
                  ks: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule):
    """Noise-prediction loss for a fixed draw of (k, eps) per element.

    Differentiable in theta (pass a Var); mean over the batch of the
    squared prediction error summed over action coordinates.
    """
    abar = schedule.alpha_bars[ks - 1][:, None]
    noisy = np.sqrt(abar) * actions + np.sqrt(1.0 - abar) * eps
    x = np.concatenate([noisy, (ks / schedule.steps)[:, None], states], axis=1)
    pred = mlp_apply(theta, sizes, x)
    resid = eps - pred
    return (resid * resid).sum() / len(ks)


def bc_loss(params: MlpParams, batch, schedule: NoiseSchedule,
            rng: np.random.Generator) -> float:
    """Monte-Carlo BC loss with k ~ Uniform{1..K} per batch element."""
    states, actions = batch
    ks = rng.integers(1, schedule.steps + 1, size=len(states))
    eps = rng.standard_normal(actions.shape)
    return float(bc_loss_terms(params.theta, params.sizes, states, actions, ks, eps, schedule))


# -- pretraining -----------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    env: EnvConfig = EnvConfig()
    denoise_steps: int = 20
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: tuple = (64, 64)
    steps: int = 5000
    batch_size: int = 64
    lr: float = 3e-4
    n_per_mode: int = 25
    demo_noise_std: float = 0.05
    eval_episodes: int = 100
    seed: int = 0

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.denoise_steps, self.beta_start, self.beta_end)

    def sizes(self) -> tuple:
        state_dim, action_dim = 4, 2
        return (predictor_in_dim(action_dim, state_dim), *self.hidden, action_dim)


@dataclass
class PretrainResult:
    params: MlpParams
    loss_history: list
    metrics: object  # training.Metrics
    demos: DemoSet


def fit_noise_predictor(cfg: PretrainConfig):
    """Adam-fit the predictor on fresh demos; returns (params, losses, demos)."""
    cfg.env.validate()
    schedule = cfg.schedule()
    demos = generate_demos(cfg.env, cfg.n_per_mode, rng_for(cfg.seed, "demos"),
                           cfg.demo_noise_std)
    states, actions = demos.states, demos.actions
    params = init_mlp(cfg.sizes(), rng_for(cfg.seed, "init"))
    opt = adam_init(params.n_params, cfg.lr)
    rng = rng_for(cfg.seed, "pretrain")
    losses = []
    for _ in range(cfg.steps):
        idx = rng.integers(0, len(states), size=cfg.batch_size)
        ks = rng.integers(1, schedule.steps + 1, size=cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, actions.shape[1]))
        s_b, a_b = states[idx], actions[idx]
        loss, grad = grad_scalar(
            lambda th: bc_loss_terms(th, params.sizes, s_b, a_b, ks, eps, schedule), params)
        params, opt = adam_step(opt, params, grad)
        losses.append(loss)
    return params, losses, demos


def pretrain(cfg: PretrainConfig) -> PretrainResult:
    """Train the noise predictor on demos; gate on bimodality of rollouts."""
    from .training import evaluate  # local import avoids a module cycle

    params, losses, demos = fit_noise_predictor(cfg)
    metrics = evaluate(params, cfg.env, cfg.schedule(), cfg.eval_episodes, cfg.seed)
    share = min(metrics.mode_counts[LEFT], metrics.mode_counts[RIGHT]) / cfg.eval_episodes
    if share < 0.10:
        raise PretrainingFailedError(
            f"mode collapse: min mode share {share:.2f} over {cfg.eval_episodes} episodes "
            f"(counts {metrics.mode_counts})", metrics)
    return PretrainResult(params, losses, metrics, demos)


# -- demo corpus IO ---------------------------------------------------------

_DEMOLOG_FORMAT = "difftune-demolog"


def save_demos(path, demos: DemoSet) -> None:
    doc = {"format": _DEMOLOG_FORMAT, "version": 1, "episodes": [
        {"mode": ep.mode,
         "steps": [{"state": s.tolist(), "action": a.tolist(), "next_state": ns.tolist()}
                   for (s, a, ns) in ep.steps]}
        for ep in demos.episodes]}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_demos(path) -> DemoSet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _DEMOLOG_FORMAT or doc.get("version") != 1:
        raise GenerationError(f"not a v1 difftune demo log: {path}")
    demos = DemoSet()
    for rec in doc["episodes"]:
        steps = [(np.array(st["state"]), np.array(st["action"]), np.array(st["next_state"]))
                 for st in rec["steps"]]
        demos.episodes.append(DemoEpisode(steps, rec["mode"]))
    return demos
