"""Shared oracles for the test suite: finite differences and error norms."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-3):
    """Worst per-coordinate relative error with an absolute floor.

    The floor keeps finite-difference cancellation noise on near-zero
    coordinates from registering as disagreement; genuine gradient bugs
    produce O(1) relative errors and are still caught.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
