"""Named, independent random streams derived from one master seed.

Every piece of randomness in the package (world layout, episode
sampling, parameter init, action sampling) pulls from its own named
stream so components can be re-seeded independently in tests and so a
single --seed flag pins an entire run.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for sub-stream `name` (+ optional indices).

    The same (seed, name, indices) triple always yields an identical
    generator; distinct names or indices yield independent streams.
    """
    key = zlib.crc32(name.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(key, *indices))
    return np.random.default_rng(seq)
