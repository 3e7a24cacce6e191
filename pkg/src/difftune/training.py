"""Fine-tuning loop, rollout evaluation, and experiment sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import NumericalError
from .diffusion import NoiseSchedule
from .env import LEFT, RIGHT, UNDEFINED, EnvConfig, rollout
from .losses import (KIND_DPO, KIND_ROBUST, LOSS_KINDS, LossConfig,
                     assemble_comparisons, finetune_objective, resolve_observed,
                     trajectory_features)
from .nn import ConfigError, MlpParams, adam_init, adam_step, grad_scalar
from .preferences import CorruptionSpec, corrupt
from .seeding import rng_for, seed_for


@dataclass(frozen=True)
class TrainConfig:
    kind: str = KIND_ROBUST
    loss: LossConfig = field(default_factory=LossConfig)
    epochs: int = 50
    batch_pairs: int = 64
    lr: float = 3e-5
    seed: int = 0
    eval_every: int = 10
    eval_episodes: int = 100

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.epochs < 0 or self.batch_pairs < 1 or self.eval_every < 1 \
                or self.eval_episodes < 1:
            raise ConfigError("counts must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")


@dataclass(frozen=True)
class Metrics:
    episodes: int
    success_count: int
    mode_counts: dict
    preferred: str = LEFT

    @property
    def success_rate(self) -> float:
        return self.success_count / self.episodes

    @property
    def alignment_rate(self) -> float:
        # Undefined-mode episodes count as misaligned.
        return self.mode_counts.get(self.preferred, 0) / self.episodes


class TrainingAborted(RuntimeError):
    """Fine-tuning hit a non-finite loss; carries the last good state."""

    def __init__(self, message, params, history):
        super().__init__(message)
        self.params = params
        self.history = history


def evaluate(params: MlpParams, config: EnvConfig, schedule: NoiseSchedule,
             n: int, seed: int, preferred: str = LEFT) -> Metrics:
    """Success and mode-alignment rates over n independent rollouts."""
    metrics, _ = evaluate_trajectories(params, config, schedule, n, seed, preferred)
    return metrics


def evaluate_trajectories(params: MlpParams, config: EnvConfig, schedule: NoiseSchedule,
                          n: int, seed: int, preferred: str = LEFT):
    if n < 1:
        raise ConfigError("need at least one evaluation episode")
    trajs = [rollout(params, config, schedule, rng_for(seed, "eval-ep", i))
             for i in range(n)]
    counts = {LEFT: 0, RIGHT: 0, UNDEFINED: 0}
    for t in trajs:
        counts[t.mode] += 1
    metrics = Metrics(n, sum(t.success for t in trajs), counts, preferred)
    return metrics, trajs


@dataclass
class FinetuneResult:
    params: MlpParams
    history: list          # rows logged at eval cadence
    final_metrics: Metrics


def finetune(ref: MlpParams, pairs, store: dict, env_cfg: EnvConfig,
             schedule: NoiseSchedule, cfg: TrainConfig,
             preferred: str = LEFT) -> FinetuneResult:
    """Optimize a copy of the reference policy on observed preference pairs.

    The reference stays frozen: it anchors every per-step log-density
    ratio and is never written to. History rows are logged every
    cfg.eval_every epochs and at the final epoch.
    """
    features = {}
    for p in pairs:
        for tid in (p.winner_id, p.loser_id):
            if tid not in features:
                features[tid] = trajectory_features(store[tid], ref, schedule)
    observed = resolve_observed(pairs, features)

    params = MlpParams(ref.sizes, ref.theta.copy())
    opt = adam_init(params.n_params, cfg.lr) if cfg.lr > 0 else None
    rng = rng_for(cfg.seed, "finetune", cfg.kind)
    history = []

    def log_row(epoch, mean_loss):
        metrics = evaluate(params, env_cfg, schedule, cfg.eval_episodes,
                           seed_for(cfg.seed, "finetune-eval"), preferred)
        history.append({
            "loss_kind": cfg.kind, "epoch": epoch, "loss": mean_loss,
            "success_rate": metrics.success_rate,
            "alignment_rate": metrics.alignment_rate,
            "drift": float(np.linalg.norm(params.theta - ref.theta)),
            "seed": cfg.seed,
        })
        return metrics

    metrics = log_row(0, float("nan"))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(observed))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_pairs):
            chunk = [observed[i] for i in order[lo:lo + cfg.batch_pairs]]
            batch = assemble_comparisons(chunk, schedule)
            try:
                loss, grad = grad_scalar(
                    lambda th: finetune_objective(th, params.sizes, batch, cfg.loss,
                                                  cfg.kind), params)
            except NumericalError as err:
                raise TrainingAborted(f"epoch {epoch}: {err}", params, history) from err
            if opt is not None:
                params, opt = adam_step(opt, params, grad)
            epoch_losses.append(loss)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            metrics = log_row(epoch, float(np.mean(epoch_losses)))
    return FinetuneResult(params, history, metrics)


def corruption_sweep(ref: MlpParams, base_pairs, store: dict, env_cfg: EnvConfig,
                     schedule: NoiseSchedule, rates, cfg_for, corrupt_seed: int = 0,
                     preferred: str = LEFT) -> list:
    """Fine-tune both loss kinds on a freshly corrupted copy per rate.

    cfg_for(rate, kind) supplies the TrainConfig for each cell; cell
    failures are recorded in their row without aborting siblings.
    """
    rows = []
    for rate in rates:
        spec = CorruptionSpec(rate, seed_for(corrupt_seed, "corrupt", rate))
        corrupted = corrupt(base_pairs, spec)
        for kind in (KIND_ROBUST, KIND_DPO):
            cfg = cfg_for(rate, kind)
            rows.append(_run_cell(ref, corrupted, store, env_cfg, schedule, cfg,
                                  preferred, {"corruption_rate": rate}))
    return rows


def ablation_sweep(axis: str, values, ref: MlpParams, pairs, store: dict,
                   env_cfg: EnvConfig, schedule: NoiseSchedule, base_cfg: TrainConfig,
                   preferred: str = LEFT) -> list:
    """One fine-tune per value of a LossConfig field, all else frozen."""
    if axis not in ("alpha", "beta", "gamma"):
        raise ConfigError(f"unknown ablation axis {axis!r}")
    if not values:
        raise ConfigError("ablation needs at least one value")
    rows = []
    for v in values:
        cfg = replace(base_cfg, loss=replace(base_cfg.loss, **{axis: float(v)}))
        rows.append(_run_cell(ref, pairs, store, env_cfg, schedule, cfg, preferred,
                              {"axis": axis, "value": float(v)}))
    return rows


def _run_cell(ref, pairs, store, env_cfg, schedule, cfg, preferred, extra) -> dict:
    row = {"loss_kind": cfg.kind, "seed": cfg.seed, **extra}
    try:
        res = finetune(ref, pairs, store, env_cfg, schedule, cfg, preferred)
        m = res.final_metrics
        row.update(epoch=cfg.epochs, success_rate=m.success_rate,
                   alignment_rate=m.alignment_rate,
                   drift=float(np.linalg.norm(res.params.theta - ref.theta)),
                   loss=res.history[-1]["loss"], error="")
        row["result"] = res
    except (TrainingAborted, NumericalError, ConfigError) as err:
        row.update(epoch=None, success_rate=None, alignment_rate=None,
                   drift=None, loss=None, error=str(err), result=None)
    return row
