"""Counter-based random streams.

Every random draw in the toolkit comes from a Philox generator keyed on
(seed, *tags), so independent sites (init of each tensor, each dropout mask,
each epoch's batch order) get independent, reproducible streams regardless
of call order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *tags) -> int:
    """Stable 128-bit key from a seed and a tag path."""
    h = hashlib.blake2b(digest_size=16)
    h.update(repr((int(seed),) + tags).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def stream_rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *tags)))


def subseed(seed: int, *tags) -> int:
    """Derived integer seed for APIs that take a plain seed."""
    return derive_key(seed, *tags) % (2 ** 63)
