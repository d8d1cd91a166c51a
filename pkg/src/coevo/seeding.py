"""Counter-based seed derivation.

Every stochastic choice in a run draws from a seed derived from the run seed
plus a path of labels (ids, iteration numbers, episode indices), so results do
not depend on evaluation order or the number of workers.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def label_hash(label) -> int:
    """Stable 64-bit hash of an id or integer (Python's ``hash`` is salted)."""
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        data = b"i" + str(int(label)).encode()
    else:
        data = b"s" + str(label).encode()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def derive_seed(root: int, *labels) -> int:
    h = splitmix64(int(root) & MASK64)
    for label in labels:
        h = splitmix64(h ^ label_hash(label))
    return h


def episode_seed(run_seed: int, policy_id: str, level_id: str, index: int) -> int:
    return derive_seed(run_seed, policy_id, level_id, index)


def rng_for(root: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
