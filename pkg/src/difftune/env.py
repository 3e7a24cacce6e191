"""2D obstacle-avoidance navigation task and rollout recording.

The agent starts near the bottom of a square workspace and must cross a
goal line at the top while avoiding six static disk obstacles arranged
mirror-symmetrically in two staggered rows about a vertical center line.
A pretrained policy passes the obstacle field on the left or on the
right; that side is the trajectory's behavior mode.

States are flat float64 vectors [x, y, goal_x, goal_y]; actions are 2D
position deltas clamped per coordinate. Workspace units are chosen so
the per-step clamp is 1.0, which keeps actions on the unit scale the
diffusion sampler's N(0, I) prior expects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diffusion import DenoiseChain, NoiseSchedule, sample_chain
from .nn import ConfigError, MlpParams

LEFT = "left"
RIGHT = "right"
UNDEFINED = "undefined"

# (cx, cy, radius) for the default layout; rows at y=3.8 and y=6.2.
_DEFAULT_OBSTACLES = (
    (2.0, 3.8, 0.7), (5.0, 3.8, 0.7), (8.0, 3.8, 0.7),
    (2.4, 6.2, 0.7), (5.0, 6.2, 0.7), (7.6, 6.2, 0.7),
)


@dataclass(frozen=True)
class EnvConfig:
    start: tuple = (5.0, 0.6)
    goal_line_y: float = 9.0
    obstacles: tuple = _DEFAULT_OBSTACLES
    bounds: tuple = (0.0, 0.0, 10.0, 10.0)  # xmin, ymin, xmax, ymax
    max_steps: int = 80
    action_clamp: float = 1.0
    reset_jitter_std: float = 0.1  # 1% of the workspace extent
    center_x: float = 5.0

    def validate(self) -> None:
        xmin, ymin, xmax, ymax = self.bounds
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.action_clamp <= 0:
            raise ConfigError("action_clamp must be positive")
        for cx, cy, r in self.obstacles:
            if r <= 0:
                raise ConfigError("obstacle radius must be positive")
            if not (xmin < cx - r and cx + r < xmax and ymin < cy - r and cy + r < ymax):
                raise ConfigError(f"obstacle ({cx},{cy},{r}) not strictly inside bounds")
            if (self.start[0] - cx) ** 2 + (self.start[1] - cy) ** 2 < r * r:
                raise ConfigError("start position inside an obstacle")

    @property
    def first_row_y(self) -> float:
        return min(cy for _, cy, _ in self.obstacles)

    @property
    def goal_point(self) -> np.ndarray:
        return np.array([self.center_x, self.goal_line_y])


def env_reset(config: EnvConfig, rng: np.random.Generator) -> np.ndarray:
    pos = np.asarray(config.start, float) + config.reset_jitter_std * rng.standard_normal(2)
    return np.concatenate([pos, config.goal_point])


def env_step(state: np.ndarray, action: np.ndarray, config: EnvConfig):
    """Apply a clamped position delta; returns (next_state, collided, reached)."""
    a = np.clip(np.asarray(action, float), -config.action_clamp, config.action_clamp)
    xmin, ymin, xmax, ymax = config.bounds
    pos = np.clip(state[:2] + a, [xmin, ymin], [xmax, ymax])
    collided = any((pos[0] - cx) ** 2 + (pos[1] - cy) ** 2 < r * r
                   for cx, cy, r in config.obstacles)
    reached = bool(pos[1] >= config.goal_line_y)
    return np.concatenate([pos, state[2:]]), bool(collided), reached


@dataclass
class TrajStep:
    state: np.ndarray
    chain: DenoiseChain
    next_state: np.ndarray

    @property
    def action(self) -> np.ndarray:
        return self.chain.a0


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)
    reached: bool = False
    collision: bool = False
    timeout: bool = False
    mode: str = UNDEFINED

    @property
    def success(self) -> bool:
        return self.reached and not self.collision

    def __len__(self):
        return len(self.steps)

    def positions(self) -> np.ndarray:
        """Visited positions including the final one, shape (T+1, 2)."""
        pts = [st.state[:2] for st in self.steps] + [self.steps[-1].next_state[:2]]
        return np.stack(pts)


def rollout(params: MlpParams, config: EnvConfig, schedule: NoiseSchedule,
            rng: np.random.Generator) -> Trajectory:
    """Run one episode, recording the full denoising chain of every control."""
    return rollout_policy(lambda s, r: sample_chain(params, s, schedule, r), config, rng)


def rollout_policy(chain_policy, config: EnvConfig, rng: np.random.Generator) -> Trajectory:
    """Episode driver over any state -> DenoiseChain policy (testing hook)."""
    s = env_reset(config, rng)
    traj = Trajectory()
    for _ in range(config.max_steps):
        chain = chain_policy(s, rng)
        next_s, collided, reached = env_step(s, chain.a0, config)
        traj.steps.append(TrajStep(s, chain, next_s))
        s = next_s
        if collided or reached:
            traj.collision, traj.reached = collided, reached
            break
    traj.timeout = not (traj.collision or traj.reached)
    traj.mode = classify_mode(traj, config)
    return traj


def classify_mode(traj: Trajectory, config: EnvConfig) -> str:
    """Side of the corridor center line by mean lateral offset.

    Undefined when the trajectory never reaches the first obstacle row.
    """
    if not traj.steps:
        return UNDEFINED
    pts = traj.positions()
    if pts[:, 1].max() < config.first_row_y:
        return UNDEFINED
    off = float(pts[:, 0].mean() - config.center_x)
    if off < 0:
        return LEFT
    if off > 0:
        return RIGHT
    return UNDEFINED


def is_success(traj: Trajectory) -> bool:
    return bool(traj.reached and not traj.collision)


# -- trajectory log IO ----------------------------------------------------
#
# JSON, one document per file:
#   {"format": "difftune-trajlog", "version": 1,
#    "trajectories": {id: {"reached":…, "collision":…, "timeout":…, "mode":…,
#                          "steps": [{"state": […], "next_state": […],
#                                     "chain": [[…], …], "chain_log_prob": f}]}}}
# The chain's conditioning state equals the step state and is not repeated.
# Floats are emitted via repr and round-trip losslessly.

_TRAJLOG_FORMAT = "difftune-trajlog"


def save_trajectories(path, trajectories: dict) -> None:
    doc = {"format": _TRAJLOG_FORMAT, "version": 1, "trajectories": {}}
    for tid, traj in trajectories.items():
        doc["trajectories"][tid] = {
            "reached": traj.reached, "collision": traj.collision,
            "timeout": traj.timeout, "mode": traj.mode,
            "steps": [{
                "state": st.state.tolist(),
                "next_state": st.next_state.tolist(),
                "chain": [a.tolist() for a in st.chain.states],
                "chain_log_prob": st.chain.log_prob,
            } for st in traj.steps],
        }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_trajectories(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _TRAJLOG_FORMAT or doc.get("version") != 1:
        raise ConfigError(f"not a v1 difftune trajectory log: {path}")
    out = {}
    for tid, rec in doc["trajectories"].items():
        steps = []
        for srec in rec["steps"]:
            state = np.array(srec["state"])
            chain = DenoiseChain(states=[np.array(a) for a in srec["chain"]],
                                 s=state, log_prob=srec["chain_log_prob"])
            steps.append(TrajStep(state, chain, np.array(srec["next_state"])))
        out[tid] = Trajectory(steps=steps, reached=rec["reached"],
                              collision=rec["collision"], timeout=rec["timeout"],
                              mode=rec["mode"])
    return out
