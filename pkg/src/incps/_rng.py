"""Counter-based random streams keyed by (seed, path).

Every stochastic component in the package draws from a Philox generator
whose 128-bit key is derived from a user seed plus a path of labels
(role strings, time indices, replication counters). Streams for distinct
paths are independent, construction is O(1), and results never depend on
the order in which streams are consumed, which keeps generation and
Monte Carlo oracles deterministic under any parallel schedule.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _label_word(part) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return int(part) & _MASK


def _key_words(seed: int, path) -> tuple:
    lo = _splitmix(int(seed) & _MASK)
    hi = _splitmix(lo ^ 0xD1B54A32D192ED03)
    for part in path:
        word = _splitmix(_label_word(part))
        lo = _splitmix(lo ^ word)
        hi = _splitmix((hi + word) & _MASK)
    return lo, hi


def stream(seed: int, *path) -> np.random.Generator:
    """Generator for the stream keyed by ``(seed, *path)``.

    ``path`` parts may be ints or short strings. The same key always
    yields the same stream; different keys yield independent streams.
    """
    return np.random.Generator(np.random.Philox(key=list(_key_words(seed, path))))


def child_seed(seed: int, *path) -> int:
    """Derived integer seed for an independent child run (replications)."""
    return _key_words(seed, path)[0]
