"""Named random substreams derived from a single master seed.

Every stochastic component draws from its own generator, derived from the
master seed plus a path of names (e.g. ``("epoch", 3)``). Derivation is a
keyed hash, so streams are independent of each other and stable across
platforms and numpy versions.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, *path: object) -> int:
    """Map a master seed and a name path to a 64-bit stream seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master) & _MASK64).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def substream(master: int, *path: object) -> np.random.Generator:
    """Generator for the named substream of ``master``."""
    return np.random.default_rng(derive_seed(master, *path))
