"""Named random streams.

Every stream is a Philox generator keyed by ``(seed, *path)`` through
``SeedSequence.spawn_key``. A path is a tuple of ints or strings; strings are
hashed with crc32 so purposes get stable integer ids. Drawing from one
stream never advances another, so adding a new purpose leaves existing
draws untouched.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream key components must be non-negative, got {part}")
    return int(part)


def seed_sequence(seed: int, *path: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(seed), spawn_key=tuple(_key_part(p) for p in path)
    )


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path: int | str) -> int:
    """A 64-bit child seed, a pure function of ``(seed, *path)``."""
    return int(seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0])
