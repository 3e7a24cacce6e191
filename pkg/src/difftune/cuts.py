"""Exhaustive verification of the hypothesis-cutting lemmas on small grids.

Preference cuts are modeled as affine half-spaces over a discretized
low-dimensional parameter space, independent of any neural network: each
cut votes for the parameters it contains, a corrupted label flips its
half-space, and the lemmas' membership claims are checked by enumerating
every grid point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .losses import hard_objective, vote_threshold
from .nn import ConfigError

_MAX_GRID_POINTS = 10 ** 6


@dataclass(frozen=True)
class GridSpace:
    lows: tuple
    highs: tuple
    resolution: tuple  # points per axis

    def __post_init__(self):
        d = len(self.lows)
        if not 1 <= d <= 3 or len(self.highs) != d or len(self.resolution) != d:
            raise ConfigError("grid must be 1-3 dimensional with matching axis specs")
        if any(r < 2 for r in self.resolution):
            raise ConfigError("need at least 2 points per axis")
        if any(h <= l for l, h in zip(self.lows, self.highs)):
            raise ConfigError("each axis needs high > low")
        if int(np.prod(self.resolution)) > _MAX_GRID_POINTS:
            raise ConfigError("grid too large to enumerate")

    @property
    def dim(self) -> int:
        return len(self.lows)

    def axes(self) -> list:
        return [np.linspace(l, h, r)
                for l, h, r in zip(self.lows, self.highs, self.resolution)]

    def points(self) -> np.ndarray:
        """All grid points, shape (prod(resolution), dim), C-order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def extent(self) -> float:
        return max(h - l for l, h in zip(self.lows, self.highs))


@dataclass(frozen=True)
class SyntheticCut:
    """Half-space {theta : w . theta + b >= 0}; `flipped` records whether
    the inequality was reversed to mimic a corrupted label."""
    w: np.ndarray
    b: float
    flipped: bool = False

    def values(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.w + self.b

    def satisfied(self, pts: np.ndarray) -> np.ndarray:
        return self.values(pts) >= 0.0  # boundary counts as satisfied


def make_cuts(theta_h: np.ndarray, n: int, flip_count: int, rng: np.random.Generator,
              scale: float = 1.0, max_retries: int = 100) -> list:
    """n random half-spaces strictly containing theta_h, then flip_count of
    them reversed so theta_h violates exactly those."""
    theta_h = np.asarray(theta_h, float)
    if not 0 <= flip_count <= n:
        raise ConfigError("need 0 <= flip_count <= n")
    flip_idx = set(rng.choice(n, size=flip_count, replace=False)) if flip_count else set()
    cuts = []
    for i in range(n):
        for _ in range(max_retries):
            w = rng.standard_normal(theta_h.size)
            norm = np.linalg.norm(w)
            if norm < 1e-12:
                continue
            w = w / norm
            margin = rng.uniform(0.02, 0.6) * scale
            b = margin - float(w @ theta_h)
            if abs(w @ theta_h + b) > 1e-9:  # strict interior, not degenerate
                break
        else:
            raise ConfigError("could not generate a non-degenerate cut")
        if i in flip_idx:
            cuts.append(SyntheticCut(-w, -b, flipped=True))
        else:
            cuts.append(SyntheticCut(w, b, flipped=False))
    return cuts


def vote_counts(grid: GridSpace, cuts) -> np.ndarray:
    """Satisfied-cut count at every grid point."""
    pts = grid.points()
    counts = np.zeros(len(pts), dtype=np.int64)
    for cut in cuts:
        counts += cut.satisfied(pts)
    return counts


def point_votes(theta: np.ndarray, cuts) -> int:
    theta = np.asarray(theta, float)[None, :]
    return int(sum(bool(cut.satisfied(theta)[0]) for cut in cuts))


@dataclass(frozen=True)
class Lemma1Report:
    n_cuts: int
    n_flipped: int
    theta_h_votes: int
    max_votes: int
    argmax_size: int            # points attaining the max count
    full_set_size: int          # points satisfying every cut
    theta_h_in_argmax: bool
    theta_h_in_full_set: bool

    @property
    def holds(self) -> bool:
        """Clean data: theta_h maximizes the vote count. Dirty data:
        theta_h is outside the all-cuts solution set."""
        if self.n_flipped == 0:
            return self.theta_h_in_argmax and self.theta_h_votes == self.n_cuts
        return not self.theta_h_in_full_set


def check_lemma1(grid: GridSpace, theta_h: np.ndarray, cuts) -> Lemma1Report:
    _require_on_grid(grid, theta_h)
    counts = vote_counts(grid, cuts)
    n = len(cuts)
    votes = point_votes(theta_h, cuts)
    max_votes = int(counts.max()) if len(counts) else 0
    max_votes = max(max_votes, votes)  # theta_h is itself a grid point
    return Lemma1Report(
        n_cuts=n, n_flipped=sum(c.flipped for c in cuts), theta_h_votes=votes,
        max_votes=max_votes, argmax_size=int((counts == max_votes).sum()),
        full_set_size=int((counts == n).sum()),
        theta_h_in_argmax=votes == max_votes,
        theta_h_in_full_set=votes == n)


@dataclass(frozen=True)
class Lemma2Report:
    n_cuts: int
    n_flipped: int
    gamma: float
    threshold: int              # floor((1-gamma) * n_cuts)
    theta_h_votes: int
    theta_h_in_robust_set: bool
    robust_set_size: int        # conservativeness cost
    out_of_contract: bool       # flips exceeded gamma * n_cuts
    gamma_n_integral: bool      # which slack convention the instance exercises

    @property
    def holds(self) -> bool:
        return self.out_of_contract or self.theta_h_in_robust_set


def check_lemma2(grid: GridSpace, theta_h: np.ndarray, cuts, gamma: float) -> Lemma2Report:
    _require_on_grid(grid, theta_h)
    n = len(cuts)
    n_flipped = sum(c.flipped for c in cuts)
    threshold = vote_threshold(gamma, n)
    votes = point_votes(theta_h, cuts)
    counts = vote_counts(grid, cuts)
    member = bool(hard_objective(votes, gamma, n))
    gamma_n = gamma * n
    return Lemma2Report(
        n_cuts=n, n_flipped=n_flipped, gamma=gamma, threshold=threshold,
        theta_h_votes=votes, theta_h_in_robust_set=member,
        robust_set_size=int(hard_objective(counts, gamma, n).sum()),
        out_of_contract=n_flipped > gamma_n + 1e-9,
        gamma_n_integral=abs(gamma_n - round(gamma_n)) < 1e-9)


def _require_on_grid(grid: GridSpace, theta: np.ndarray) -> None:
    theta = np.asarray(theta, float)
    if theta.size != grid.dim:
        raise ConfigError("theta dimension does not match grid")
    for x, axis in zip(theta, grid.axes()):
        if np.abs(axis - x).min() > 1e-9:
            raise ConfigError(f"coordinate {x} is not a grid node")


def snap_to_grid(grid: GridSpace, theta: np.ndarray) -> np.ndarray:
    """Nearest grid node to an arbitrary point."""
    theta = np.asarray(theta, float)
    return np.array([axis[np.abs(axis - x).argmin()]
                     for x, axis in zip(theta, grid.axes())])


def random_instance(grid: GridSpace, n_cuts: int, flip_count: int,
                    rng: np.random.Generator):
    """Random interior grid node plus cuts scaled to the grid extent."""
    idx = [rng.integers(1, r - 1) if r > 2 else rng.integers(0, r)
           for r in grid.resolution]
    theta_h = np.array([axis[i] for axis, i in zip(grid.axes(), idx)])
    cuts = make_cuts(theta_h, n_cuts, flip_count, rng, scale=grid.extent())
    return theta_h, cuts


def enumerate_instances(grid: GridSpace, n_instances: int, max_cuts: int,
                        gamma: float, seed_rng: np.random.Generator,
                        flips_at_gamma_cap: bool = True):
    """Yield (theta_h, cuts, flip_count) random lemma instances.

    flip counts are drawn up to floor(gamma * n) (the lemma-2 contract),
    or fixed at that cap when flips_at_gamma_cap is set.
    """
    for _ in range(n_instances):
        n = int(seed_rng.integers(1, max_cuts + 1))
        cap = int(np.floor(gamma * n + 1e-9))
        flips = cap if flips_at_gamma_cap else int(seed_rng.integers(0, cap + 1))
        theta_h, cuts = random_instance(grid, n, flips, seed_rng)
        yield theta_h, cuts, flips
