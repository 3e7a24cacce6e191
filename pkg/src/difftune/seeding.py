"""Named deterministic rng substreams derived from one top-level seed.

Every source of randomness in the package draws from ``rng_for(seed,
*names)`` so that a run is fully reproducible from a single integer and
substreams never collide across pipeline stages.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 63) - 1


def _name_words(names) -> list[int]:
    h = hashlib.sha256("/".join(str(n) for n in names).encode()).digest()
    return [int.from_bytes(h[i:i + 8], "big") for i in (0, 8)]


def rng_for(seed: int, *names) -> np.random.Generator:
    """Generator for the substream identified by (seed, names...)."""
    return np.random.default_rng([int(seed) & _MASK] + _name_words(names))


def seed_for(seed: int, *names) -> int:
    """Stable child integer seed for APIs that want a plain int."""
    return (int(seed) & _MASK) ^ _name_words(names)[0]
