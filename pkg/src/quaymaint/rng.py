"""Seed derivation for reproducible, order-independent random streams.

Every stream is a ``numpy.random.Generator`` backed by PCG64 and seeded by a
``numpy.random.SeedSequence(entropy=master_seed, spawn_key=(purpose, index))``.
Because the spawn key fully determines the stream, episode ``k`` sees the same
random numbers whether it runs first, last, serially or on a worker process.

Purposes:

====  ==========================================
0     environment dynamics of evaluation episode k
1     policy sampling of evaluation episode k
2     network initialisation (index 0 actor, 1 critic)
3     environment dynamics of training episode k
4     action sampling during training (index 0)
====  ==========================================
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "PCG64/SeedSequence"

EVAL_ENV = 0
EVAL_POLICY = 1
INIT = 2
TRAIN_ENV = 3
TRAIN_POLICY = 4


def seed_sequence(master_seed: int, purpose: int, index: int = 0) -> np.random.SeedSequence:
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(purpose), int(index)))


def generator(master_seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return the PCG64 generator for ``(master_seed, purpose, index)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, purpose, index)))


def episode_generators(master_seed: int, episode: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Environment and policy streams of evaluation episode ``episode``."""
    return generator(master_seed, EVAL_ENV, episode), generator(master_seed, EVAL_POLICY, episode)
