"""Named, reproducible random streams.

Every source of randomness in a run (parameter init, shuffling, augmentation,
synthetic data) draws from its own stream, derived from the run seed plus a
string path. Streams are mutually independent, so adding or removing one
consumer (say, a passive head that a baseline run does not have) leaves every
other stream's draw sequence untouched.
"""

from __future__ import annotations

import hashlib

import numpy as np


def named_stream(seed: int, *names: str) -> np.random.Generator:
    """Return a Generator keyed by ``seed`` and a path of stream names.

    The same (seed, names) pair always yields the same stream, on any
    platform. Different name paths yield statistically independent streams.
    """
    path = "/".join(names)
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    spawn_key = tuple(
        int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)
    )
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.default_rng(seq)
