"""DDPM machinery: noise schedule, forward noising, reverse sampler, and
exact per-step Gaussian log-densities with full-chain recording.

Conventions. Denoising steps are indexed k = K..1 (arrays store index
k-1). The final step k = 1 is sampled at the mean with no noise, so its
transition has no density; log-probability sums therefore run over
k = 2..K throughout the package. The per-step variance is the DDPM
posterior beta_k * (1 - abar_{k-1}) / (1 - abar_k), which is 0 at k = 1
and strictly positive beyond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import value_of
from .nn import ConfigError, MlpParams, mlp_apply


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int                 # K
    betas: np.ndarray          # (K,), betas[k-1] is beta_k
    alphas: np.ndarray         # 1 - betas
    alpha_bars: np.ndarray     # cumulative products
    sigma2: np.ndarray         # posterior variances, sigma2[0] == 0.0

    def beta(self, k: int) -> float:
        return float(self.betas[k - 1])

    def alpha(self, k: int) -> float:
        return float(self.alphas[k - 1])

    def alpha_bar(self, k: int) -> float:
        return float(self.alpha_bars[k - 1])

    def step_var(self, k: int) -> float:
        return float(self.sigma2[k - 1])


def make_schedule(steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta ladder with derived cumulative products and variances."""
    if steps < 1:
        raise ConfigError(f"step count must be >= 1, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, steps)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    prev = np.concatenate([[1.0], alpha_bars[:-1]])
    sigma2 = betas * (1.0 - prev) / (1.0 - alpha_bars)
    return NoiseSchedule(int(steps), betas, alphas, alpha_bars, sigma2)


def forward_noise(a0: np.ndarray, k: int, schedule: NoiseSchedule, rng: np.random.Generator):
    """Sample the forward-noised action at step k; returns (noisy, injected noise)."""
    _check_k(k, schedule)
    eps = rng.standard_normal(np.shape(a0))
    abar = schedule.alpha_bar(k)
    return math.sqrt(abar) * np.asarray(a0, float) + math.sqrt(1.0 - abar) * eps, eps


def predictor_input(a_k, k: int, steps: int, s) -> np.ndarray:
    """Noise-predictor conditioning row: [action, k/K, env state]."""
    return np.concatenate([np.asarray(a_k, float), [k / steps], np.asarray(s, float)])


def predictor_in_dim(action_dim: int, state_dim: int) -> int:
    return action_dim + 1 + state_dim


def step_mean(theta, sizes, a_k: np.ndarray, k: int, s: np.ndarray, schedule: NoiseSchedule):
    """Posterior mean of the reverse transition at step k.

    theta may be a plain array or an autodiff Var; the result has the
    same kind.
    """
    x = predictor_input(a_k, k, schedule.steps, s)[None, :]
    eps_hat = mlp_apply(theta, sizes, x)[0]
    c1 = 1.0 / math.sqrt(schedule.alpha(k))
    c2 = schedule.beta(k) / math.sqrt(1.0 - schedule.alpha_bar(k))
    return (a_k - c2 * eps_hat) * c1


def gaussian_log_density(x, mean, var: float):
    """Diagonal Gaussian log-density with shared per-coordinate variance."""
    resid = x - mean
    d = np.shape(value_of(x))[-1]
    quad = (resid * resid).sum()
    return -0.5 * (quad / var) - 0.5 * d * math.log(2.0 * math.pi * var)


def reverse_step(params: MlpParams, a_k: np.ndarray, k: int, s: np.ndarray,
                 schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One reverse-denoising transition; noise is omitted at k = 1."""
    _check_k(k, schedule)
    mean = step_mean(params.theta, params.sizes, a_k, k, s, schedule)
    if k == 1:
        return mean
    return mean + math.sqrt(schedule.step_var(k)) * rng.standard_normal(mean.shape)


def step_log_density(params: MlpParams, a_prev: np.ndarray, a_k: np.ndarray, k: int,
                     s: np.ndarray, schedule: NoiseSchedule) -> float:
    """Exact log p(a_prev | a_k, s) of the reverse transition at step k."""
    _check_k(k, schedule)
    var = schedule.step_var(k)
    if var <= 0.0:
        raise ValueError(f"step k={k} has zero variance; its transition has no density")
    mean = step_mean(params.theta, params.sizes, a_k, k, s, schedule)
    return float(gaussian_log_density(a_prev, mean, var))


@dataclass
class DenoiseChain:
    """Recorded reverse chain [a^K, ..., a^0] conditioned on env state s.

    log_prob is the sum of the sampled transitions' log-densities over
    k = 2..K, accumulated online during sampling.
    """
    states: list = field(default_factory=list)
    s: np.ndarray = None
    log_prob: float = 0.0

    @property
    def a0(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self):
        return len(self.states)


def sample_chain(params: MlpParams, s: np.ndarray, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> DenoiseChain:
    """Draw a^K ~ N(0, I) and run the reverse sampler, recording every state."""
    a = rng.standard_normal(params.out_dim)
    states = [a]
    log_prob = 0.0
    for k in range(schedule.steps, 0, -1):
        mean = step_mean(params.theta, params.sizes, a, k, s, schedule)
        if k > 1:
            var = schedule.step_var(k)
            a = mean + math.sqrt(var) * rng.standard_normal(mean.shape)
            log_prob += gaussian_log_density(a, mean, var)
        else:
            a = mean
        states.append(a)
    return DenoiseChain(states=states, s=np.asarray(s, float), log_prob=float(log_prob))


def chain_log_prob(params: MlpParams, chain: DenoiseChain, schedule: NoiseSchedule) -> float:
    """Replay a recorded chain's log-probability (k = 2..K) under params."""
    if len(chain) != schedule.steps + 1:
        raise ConfigError(f"chain length {len(chain)} != K+1 = {schedule.steps + 1}")
    total = 0.0
    for k in range(schedule.steps, 1, -1):
        i = schedule.steps - k  # states[i] is a^k
        total += step_log_density(params, chain.states[i + 1], chain.states[i], k,
                                  chain.s, schedule)
    return total


def _check_k(k: int, schedule: NoiseSchedule) -> None:
    if not 1 <= k <= schedule.steps:
        raise ConfigError(f"step index {k} outside 1..{schedule.steps}")
