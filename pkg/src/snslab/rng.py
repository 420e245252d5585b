"""Counter-based random streams for reproducible parallel ensembles.

Every stochastic routine in the package takes an explicit
``numpy.random.Generator``.  Streams are derived from
``(master_seed, path_index, label)`` through a Philox counter-based
generator, so adding or removing workers never reorders randomness and
any path can be regenerated in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_key", "stream"]


def derive_key(master_seed: int, *parts) -> int:
    """128-bit Philox key from a master seed and hashable labels.

    Uses SHA-256 over the repr of the tuple, so the mapping is stable
    across platforms and Python processes (no dependence on PYTHONHASHSEED).
    """
    token = repr((int(master_seed),) + tuple(parts)).encode()
    digest = hashlib.sha256(token).digest()
    return int.from_bytes(digest[:16], "little")


def stream(master_seed: int, *parts) -> np.random.Generator:
    """Independent Generator for the given (seed, path, label, ...) tuple."""
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, *parts)))
