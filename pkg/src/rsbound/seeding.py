"""Counter-based stream splitting from one master seed.

A stream is named by a tuple of nonnegative integers (its path). The
generator for a path is ``SeedSequence(master, spawn_key=path)``, so streams
depend only on the master seed and the path, never on execution order or on
the number of workers.
"""

from __future__ import annotations

import numpy as np


def seed_sequence(master: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))


def child(ss: np.random.SeedSequence, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(p) for p in path))


def stream(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *path))
