"""Counter-based random streams keyed by (seed, task id)."""

import zlib

import numpy as np


def task_key(task):
    if isinstance(task, (int, np.integer)):
        return int(task)
    return zlib.crc32(str(task).encode())


def make_rng(seed, task=0):
    """A Philox generator whose stream depends only on ``seed`` and ``task``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, task_key(task)])))
