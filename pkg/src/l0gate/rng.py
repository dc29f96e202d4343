"""Deterministic PRNG streams.

All randomness flows from a single 64-bit run seed through numpy's PCG64
generator. Independent substreams are addressed by fixed integer keys
(``SeedSequence`` spawn keys), so weight init, batch order, mask draws and
data generation are each reproducible in isolation: changing how many
draws one consumer makes never perturbs the others.
"""

import numpy as np

# Substream tags. Values are part of the reproducibility contract: never
# renumber, only append.
INIT = 0
SHUFFLE = 1
MASK = 2
DATA = 3
EVAL = 4
SPLIT = 5

_MASK64 = (1 << 64) - 1


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream addressed by (seed, *key)."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Stable 63-bit child seed for APIs that take a plain integer."""
    return int(substream(seed, *key).integers(0, 1 << 63))
