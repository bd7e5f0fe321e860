"""Counter-based random streams keyed by structured identifiers.

Every stochastic consumer in the package asks for a stream by key, e.g.
``stream(seed, "round", 2, "candidate", 4, "bo")``.  Streams are built on
numpy's Philox generator, so two consumers with different keys never share
state and the order in which they are created does not matter.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, bool):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            # keep negatives distinct from their absolute value
            return (1 << 63) | (-int(key))
        return int(key)
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"unsupported stream key {key!r}")


def key_words(*keys: Key) -> list[int]:
    return [_key_to_int(k) for k in keys]


def stream(*keys: Key) -> np.random.Generator:
    """Return an independent generator for the given key path."""
    seq = np.random.SeedSequence(key_words(*keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(*keys: Key) -> int:
    """Collapse a key path into a single 63-bit integer seed."""
    seq = np.random.SeedSequence(key_words(*keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0]) & ((1 << 63) - 1)
