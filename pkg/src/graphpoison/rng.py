"""Deterministic random-stream derivation.

Every sampling site in the package owns an explicitly seeded generator.
Sub-streams are derived from a base seed plus string tags, so independent
components (feature noise, label draws, replay sampling, weight init)
never share or race a generator, and identical seeds reproduce runs
bit-for-bit.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(base_seed: int, *tags: int | str) -> int:
    """Stable 64-bit child seed from a base seed and a tag path."""
    words = [int(base_seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode("utf-8")))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    seq = np.random.SeedSequence(words)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def derive_rng(base_seed: int, *tags: int | str) -> np.random.Generator:
    """Generator seeded by :func:`derive_seed` of the same arguments."""
    return np.random.default_rng(derive_seed(base_seed, *tags))
