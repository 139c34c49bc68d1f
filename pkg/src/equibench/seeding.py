"""Named, reproducible random streams derived from one integer seed."""

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode())


def stream(seed: int, *names) -> np.random.Generator:
    """Generator for the sub-stream ``names`` of ``seed``.

    Distinct name paths give statistically independent streams; the same path
    always gives the same stream.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))))


def derive_seed(seed: int, *names) -> int:
    """A 32-bit integer seed for the sub-stream ``names`` of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(1)[0])
