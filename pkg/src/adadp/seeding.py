"""Deterministic per-role random streams.

A single master seed drives every experiment. Each consumer of randomness
(weight init, lot sampling, noise, data synthesis, Monte-Carlo trials) gets
its own stream seeded with master + a fixed role offset, so toggling one
consumer (say, noise) never perturbs the draws of another.
"""

from __future__ import annotations

import numpy as np

__all__ = ["ROLE_OFFSETS", "SeedBundle", "role_rng"]

ROLE_OFFSETS = {
    "init": 1,
    "lot": 2,
    "noise": 3,
    "data": 4,
    "trials": 5,
}

_MASK = 2 ** 64 - 1


def role_rng(master_seed: int, role: str) -> np.random.Generator:
    """Stream for one role: default_rng((master_seed + offset) mod 2^64)."""
    return np.random.default_rng((int(master_seed) + ROLE_OFFSETS[role]) & _MASK)


class SeedBundle:
    """All role streams derived from one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self.init = role_rng(master_seed, "init")
        self.lot = role_rng(master_seed, "lot")
        self.noise = role_rng(master_seed, "noise")
        self.data = role_rng(master_seed, "data")
        self.trials = role_rng(master_seed, "trials")

    def __repr__(self) -> str:
        return f"SeedBundle(master_seed={self.master_seed})"
