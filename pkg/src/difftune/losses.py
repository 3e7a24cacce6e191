"""Preference-optimization objectives for diffusion policies.

All objectives reduce to one quantity: the Q-value gap between a
preferred and a non-preferred denoising chain, reparameterized as the
policy/reference log-likelihood ratio summed over the chain's noisy
transitions (k = 2..K; the deterministic final step has no density).
On top of the gap sit the per-control DPO loss, the per-trajectory-step
paired DPO loss, softened per-comparison votes, and the robust loss that
thresholds the vote sum instead of insisting on every comparison.

For training efficiency the module works on flat row batches: one row
per (chain, k) transition, with per-comparison segment ids. Reference
log-densities are precomputed with the same row formula, so the gap is
exactly zero when theta equals the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import segment_sum, sigmoid, softplus, value_of
from .diffusion import DenoiseChain, NoiseSchedule
from .nn import ConfigError, MlpParams, mlp_apply

KIND_ROBUST = "robust"
KIND_DPO = "dpo"
LOSS_KINDS = (KIND_ROBUST, KIND_DPO)


class DataError(LookupError):
    """A preference pair references a trajectory id that is not stored."""


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.1   # KL anchor strength; multiplies the Q gap
    alpha: float = 1.0  # sigmoid temperature
    gamma: float = 0.0  # assumed upper bound on the corrupted fraction
    nu: float = 1.0     # threshold scale replacing the integer floor

    def __post_init__(self):
        if self.beta <= 0 or self.alpha <= 0 or self.nu <= 0:
            raise ConfigError("beta, alpha, nu must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")


# -- per-chain transition rows ----------------------------------------------


@dataclass(frozen=True)
class ChainFeatures:
    """Flat transition rows of one trajectory, ordered by env step then
    k = K..2 within the step."""
    inputs: np.ndarray    # (T*(K-1), in_dim) noise-predictor inputs
    a_k: np.ndarray       # (T*(K-1), act_dim)
    a_prev: np.ndarray    # (T*(K-1), act_dim)
    ref_logp: np.ndarray  # (T*(K-1),) reference log-densities
    n_steps: int
    rows_per_step: int


def _k_descending(schedule: NoiseSchedule) -> np.ndarray:
    return np.arange(schedule.steps, 1, -1)


def _row_coeffs(schedule: NoiseSchedule, act_dim: int):
    """Per-k coefficient rows aligned with the k = K..2 row order."""
    ks = _k_descending(schedule)
    alpha = schedule.alphas[ks - 1]
    abar = schedule.alpha_bars[ks - 1]
    var = schedule.sigma2[ks - 1]
    c1 = 1.0 / np.sqrt(alpha)
    c2 = schedule.betas[ks - 1] / np.sqrt(1.0 - abar)
    inv_var = 1.0 / var
    logconst = 0.5 * act_dim * np.log(2.0 * math.pi * var)
    return c1, c2, inv_var, logconst


def _chain_rows(chain: DenoiseChain, schedule: NoiseSchedule):
    """Input/target rows for one chain's k = K..2 transitions."""
    K = schedule.steps
    if len(chain) != K + 1:
        raise ConfigError(f"chain length {len(chain)} != K+1 = {K + 1}")
    if K < 2:  # a single-step chain has no noisy transitions
        d = chain.states[0].size
        z = np.zeros((0, d))
        return np.zeros((0, d + 1 + chain.s.size)), z, z
    a_k = np.stack(chain.states[:K - 1])    # a^K .. a^2
    a_prev = np.stack(chain.states[1:K])    # a^{K-1} .. a^1
    kcol = (_k_descending(schedule) / K)[:, None]
    scol = np.broadcast_to(chain.s, (K - 1, chain.s.size))
    inputs = np.concatenate([a_k, kcol, scol], axis=1)
    return inputs, a_k, a_prev


def _row_logp(theta, sizes, inputs, a_k, a_prev, c1, c2, inv_var, logconst):
    """Per-row reverse-transition log-density; differentiable in theta."""
    eps_hat = mlp_apply(theta, sizes, inputs)
    mean = (a_k - c2[:, None] * eps_hat) * c1[:, None]
    resid = a_prev - mean
    quad = (resid * resid).sum(axis=1)
    return quad * (-0.5 * inv_var) - logconst


def chain_feature(chain: DenoiseChain, ref: MlpParams, schedule: NoiseSchedule) -> ChainFeatures:
    inputs, a_k, a_prev = _chain_rows(chain, schedule)
    c1, c2, inv_var, logconst = _row_coeffs(schedule, a_k.shape[1])
    ref_logp = _row_logp(ref.theta, ref.sizes, inputs, a_k, a_prev, c1, c2, inv_var, logconst)
    return ChainFeatures(inputs, a_k, a_prev, np.asarray(ref_logp), 1, schedule.steps - 1)


def trajectory_features(traj, ref: MlpParams, schedule: NoiseSchedule) -> ChainFeatures:
    """All transition rows of a trajectory with precomputed reference densities."""
    rows = [_chain_rows(st.chain, schedule) for st in traj.steps]
    inputs = np.concatenate([r[0] for r in rows])
    a_k = np.concatenate([r[1] for r in rows])
    a_prev = np.concatenate([r[2] for r in rows])
    act_dim = a_k.shape[1]
    c1, c2, inv_var, logconst = _row_coeffs(schedule, act_dim)
    T = len(traj.steps)
    tiled = [np.tile(c, T) for c in (c1, c2, inv_var, logconst)]
    ref_logp = _row_logp(ref.theta, ref.sizes, inputs, a_k, a_prev, *tiled)
    return ChainFeatures(inputs, a_k, a_prev, np.asarray(ref_logp), T, schedule.steps - 1)


# -- comparison batches -------------------------------------------------------


@dataclass(frozen=True)
class ComparisonBatch:
    """Rows of many (winner step, loser step) comparisons, flattened.

    sign is +1 on winner rows and -1 on loser rows; seg maps each row to
    its comparison index.
    """
    inputs: np.ndarray
    a_k: np.ndarray
    a_prev: np.ndarray
    ref_logp: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    inv_var: np.ndarray
    logconst: np.ndarray
    sign: np.ndarray
    seg: np.ndarray
    n_comparisons: int
    pair_index: np.ndarray  # (C,) originating pair of each comparison
    step_index: np.ndarray  # (C,) env step of each comparison


def assemble_comparisons(feature_pairs, schedule: NoiseSchedule) -> ComparisonBatch:
    """Build a row batch from (winner features, loser features[, label sign])
    tuples; sign -1 encodes an observed label that inverts the pair.

    Expressing the inversion as a sign keeps row order fixed, so flipping
    one pair's label negates exactly its gap contributions and leaves
    every other comparison bit-identical. Unequal trajectory lengths are
    truncated to the shorter one; step t compares with step t.
    """
    if not feature_pairs:
        raise ConfigError("cannot assemble an empty comparison batch")
    feature_pairs = [fp if len(fp) == 3 else (*fp, 1.0) for fp in feature_pairs]
    act_dim = feature_pairs[0][0].a_k.shape[1]
    c1_k, c2_k, inv_var_k, logconst_k = _row_coeffs(schedule, act_dim)
    rps = schedule.steps - 1
    cols = {name: [] for name in
            ("inputs", "a_k", "a_prev", "ref_logp", "sign", "seg")}
    pair_index, step_index = [], []
    base = 0
    for i, (fw, fl, obs) in enumerate(feature_pairs):
        T = min(fw.n_steps, fl.n_steps)
        n = T * rps
        seg = base + np.arange(n) // rps
        for feats, sgn in ((fw, obs), (fl, -obs)):
            cols["inputs"].append(feats.inputs[:n])
            cols["a_k"].append(feats.a_k[:n])
            cols["a_prev"].append(feats.a_prev[:n])
            cols["ref_logp"].append(feats.ref_logp[:n])
            cols["sign"].append(np.full(n, sgn))
            cols["seg"].append(seg)
        pair_index.append(np.full(T, i, dtype=np.intp))
        step_index.append(np.arange(T, dtype=np.intp))
        base += T
    cat = {k: (np.concatenate(v) if v else np.zeros((0,))) for k, v in cols.items()}
    n_rows = len(cat["seg"])
    reps = n_rows // rps if rps else 0
    return ComparisonBatch(
        inputs=cat["inputs"], a_k=cat["a_k"], a_prev=cat["a_prev"],
        ref_logp=cat["ref_logp"], c1=np.tile(c1_k, reps), c2=np.tile(c2_k, reps),
        inv_var=np.tile(inv_var_k, reps), logconst=np.tile(logconst_k, reps),
        sign=cat["sign"], seg=cat["seg"].astype(np.intp), n_comparisons=base,
        pair_index=np.concatenate(pair_index) if pair_index else np.zeros(0, np.intp),
        step_index=np.concatenate(step_index) if step_index else np.zeros(0, np.intp))


def delta_q_comparisons(theta, sizes, batch: ComparisonBatch, beta: float):
    """Per-comparison Q gaps (C,); differentiable when theta is a Var."""
    logp = _row_logp(theta, sizes, batch.inputs, batch.a_k, batch.a_prev,
                     batch.c1, batch.c2, batch.inv_var, batch.logconst)
    drows = (logp - batch.ref_logp) * batch.sign
    return segment_sum(drows, batch.seg, batch.n_comparisons) * beta


def finetune_objective(theta, sizes, batch: ComparisonBatch, cfg: LossConfig, kind: str):
    """Scalar training objective over one comparison batch.

    kind "dpo" sums per-comparison -log sigmoid_alpha(gap); kind
    "robust" thresholds the softened vote sum at nu*(1-gamma) per vote
    in the batch.
    """
    if kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss kind {kind!r}")
    dq = delta_q_comparisons(theta, sizes, batch, cfg.beta)
    if kind == KIND_DPO:
        return softplus(dq * (-1.0 / cfg.alpha)).sum()
    votes = sigmoid(dq * (1.0 / cfg.alpha))
    threshold = cfg.nu * (1.0 - cfg.gamma) * batch.n_comparisons
    return softplus((threshold - votes.sum()) * (1.0 / cfg.alpha))


# -- spec-level wrappers over raw chains / stored trajectories ---------------


def delta_q(params: MlpParams, ref: MlpParams, chain_w: DenoiseChain,
            chain_l: DenoiseChain, schedule: NoiseSchedule, beta: float) -> float:
    """Q gap between two chains, each conditioned on its own recorded state."""
    batch = assemble_comparisons(
        [(chain_feature(chain_w, ref, schedule), chain_feature(chain_l, ref, schedule))],
        schedule)
    return float(value_of(delta_q_comparisons(params.theta, params.sizes, batch, beta))[0])


def dpo_percontrol_loss(params: MlpParams, ref: MlpParams, items,
                        schedule: NoiseSchedule, cfg: LossConfig) -> float:
    """-sum_i log sigmoid_alpha(gap_i) over (winner chain, loser chain) items."""
    if not items:
        raise ConfigError("empty preference item list")
    batch = assemble_comparisons(
        [(chain_feature(w, ref, schedule), chain_feature(l, ref, schedule))
         for w, l in items], schedule)
    dq = delta_q_comparisons(params.theta, params.sizes, batch, cfg.beta)
    return float(value_of(softplus(dq * (-1.0 / cfg.alpha)).sum()))


def resolve_observed(pairs, features: dict):
    """Map preference pairs to (winner, loser, observed sign) triples.

    Only the observed label is consulted; corruption bookkeeping never
    reaches the losses.
    """
    out = []
    for p in pairs:
        for tid in (p.winner_id, p.loser_id):
            if tid not in features:
                raise DataError(f"unknown trajectory id {tid!r}")
        out.append((features[p.winner_id], features[p.loser_id],
                    1.0 if p.observed_winner_is_first else -1.0))
    return out


def _features_for(pairs, store, ref, schedule) -> dict:
    feats = {}
    for p in pairs:
        for tid in (p.winner_id, p.loser_id):
            if tid in feats:
                continue
            if tid not in store:
                raise DataError(f"unknown trajectory id {tid!r}")
            feats[tid] = trajectory_features(store[tid], ref, schedule)
    return feats


def dpdpo_loss(params: MlpParams, ref: MlpParams, pairs, store: dict,
               schedule: NoiseSchedule, cfg: LossConfig) -> float:
    """Trajectory-paired DPO loss: per-step comparisons summed over pairs."""
    feats = _features_for(pairs, store, ref, schedule)
    batch = assemble_comparisons(resolve_observed(pairs, feats), schedule)
    dq = delta_q_comparisons(params.theta, params.sizes, batch, cfg.beta)
    return float(value_of(softplus(dq * (-1.0 / cfg.alpha)).sum()))


@dataclass
class VoteBatch:
    values: object          # (C,) array or Var of softened votes
    pair_index: np.ndarray
    step_index: np.ndarray

    def __len__(self):
        return len(self.pair_index)


def soft_votes(params: MlpParams, ref: MlpParams, pairs, store: dict,
               schedule: NoiseSchedule, cfg: LossConfig) -> VoteBatch:
    """Softened per-pair, per-step preference votes sigmoid_alpha(gap)."""
    feats = _features_for(pairs, store, ref, schedule)
    batch = assemble_comparisons(resolve_observed(pairs, feats), schedule)
    dq = delta_q_comparisons(params.theta, params.sizes, batch, cfg.beta)
    return VoteBatch(sigmoid(dq * (1.0 / cfg.alpha)), batch.pair_index, batch.step_index)


def robust_vote_loss(votes: VoteBatch, cfg: LossConfig, batch_total: int):
    """-log sigmoid_alpha(vote sum - nu*(1-gamma)*batch_total)."""
    if batch_total != len(votes):
        raise ConfigError(f"batch_total {batch_total} != vote count {len(votes)}")
    total = votes.values.sum()
    threshold = cfg.nu * (1.0 - cfg.gamma) * batch_total
    out = softplus((threshold - total) * (1.0 / cfg.alpha))
    return out if not isinstance(votes.values, np.ndarray) else float(out)


# -- hard (counting) objective -----------------------------------------------


def vote_threshold(gamma: float, n: int) -> int:
    """floor((1-gamma)*n), snapped so near-integer products round correctly."""
    return int(math.floor((1.0 - gamma) * n + 1e-9))


def hard_objective(vote_count, gamma: float, n_cuts: int):
    """Heaviside robust objective on integer vote counts (scalar or array)."""
    arg = np.asarray(vote_count, float) - vote_threshold(gamma, n_cuts) + 0.5
    out = (arg >= 0.0).astype(np.int64)
    return int(out) if out.ndim == 0 else out
