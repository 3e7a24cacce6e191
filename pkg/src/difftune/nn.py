"""Small dense MLP on a flat parameter vector, plus Adam and checkpoints.

Layer layout inside the flat vector, per layer: weight matrix W with
shape (fan_in, fan_out) stored row-major, then the bias (fan_out,).
Hidden layers use tanh, the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Var, tanh


class ConfigError(ValueError):
    """Invalid dimensions or configuration values."""


@dataclass(frozen=True)
class MlpParams:
    sizes: tuple[int, ...]
    theta: np.ndarray  # flat float64 parameter vector

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]


def n_params_for(sizes) -> int:
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def layer_slices(sizes):
    """Per-layer (weight slice, bias slice, fan_in, fan_out) in the flat vector."""
    out, off = [], 0
    for i in range(len(sizes) - 1):
        fi, fo = sizes[i], sizes[i + 1]
        out.append((slice(off, off + fi * fo), slice(off + fi * fo, off + fi * fo + fo), fi, fo))
        off += fi * fo + fo
    return out


def init_mlp(sizes, rng: np.random.Generator) -> MlpParams:
    """Gaussian init, std 1/sqrt(fan_in) for weights, zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"bad layer sizes {sizes}")
    theta = np.zeros(n_params_for(sizes))
    for ws, bs, fi, fo in layer_slices(sizes):
        theta[ws] = rng.normal(0.0, 1.0 / np.sqrt(fi), size=fi * fo)
    return MlpParams(sizes, theta)


def zero_mlp(sizes) -> MlpParams:
    sizes = tuple(int(s) for s in sizes)
    return MlpParams(sizes, np.zeros(n_params_for(sizes)))


def params_from_layers(layers) -> MlpParams:
    """Build params from explicit [(W(fan_in, fan_out), b(fan_out,)), ...]."""
    sizes = [np.asarray(layers[0][0]).shape[0]]
    chunks = []
    for W, b in layers:
        W, b = np.asarray(W, float), np.asarray(b, float)
        if W.shape[0] != sizes[-1] or W.shape[1] != b.shape[0]:
            raise ConfigError("inconsistent layer shapes")
        sizes.append(W.shape[1])
        chunks += [W.reshape(-1), b]
    return MlpParams(tuple(sizes), np.concatenate(chunks))


def mlp_apply(theta, sizes, x):
    """Forward pass; theta and x may each be a Var or a plain array.

    x has shape (batch, in_dim). Returns (batch, out_dim) of the same
    kind as the inputs (a Var if either input is a Var).
    """
    h = x
    slices = layer_slices(sizes)
    for li, (ws, bs, fi, fo) in enumerate(slices):
        W = theta[ws].reshape(fi, fo)
        b = theta[bs]
        h = h @ W + b
        if li < len(slices) - 1:
            h = tanh(h)
    return h


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain forward evaluation for a single input vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.in_dim:
        raise ConfigError(f"input width {x.shape[1]} != first layer {params.in_dim}")
    out = mlp_apply(params.theta, params.sizes, x)
    if not np.isfinite(out).all():
        raise ConfigError("non-finite forward output")
    return out[0] if single else out


def grad_scalar(loss_fn, params: MlpParams):
    """Loss and flat gradient of a scalar loss built from autodiff primitives."""
    theta = Var(params.theta, tag="theta")
    loss = loss_fn(theta)
    if not isinstance(loss, Var):
        return float(loss), np.zeros_like(params.theta)
    loss.backward()
    grad = theta.grad if theta.grad is not None else np.zeros_like(params.theta)
    return float(loss.value), grad


# -- Adam ----------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    m: np.ndarray
    v: np.ndarray
    step: int


def adam_init(n: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    return AdamState(lr, beta1, beta2, eps, np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, params: MlpParams, grad: np.ndarray):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if grad.shape != params.theta.shape or state.m.shape != grad.shape:
        raise ConfigError("gradient/moment length mismatch")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    theta = params.theta - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(params, theta=theta), replace(state, m=m, v=v, step=t)


# -- checkpoint IO --------------------------------------------------------

_CHECKPOINT_MAGIC = "difftune-mlp v1"


def save_checkpoint(path, params: MlpParams) -> None:
    """Text checkpoint: magic line, sizes line, one hex float per line.

    Hex floats round-trip bit-exactly.
    """
    lines = [_CHECKPOINT_MAGIC, "sizes " + " ".join(str(s) for s in params.sizes)]
    lines += [float(w).hex() for w in params.theta]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> MlpParams:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CHECKPOINT_MAGIC:
        raise ConfigError(f"not a difftune checkpoint: {path}")
    sizes = tuple(int(s) for s in lines[1].split()[1:])
    theta = np.array([float.fromhex(tok) for tok in lines[2:] if tok], dtype=np.float64)
    if theta.size != n_params_for(sizes):
        raise ConfigError(f"checkpoint length mismatch in {path}")
    return MlpParams(sizes, theta)
