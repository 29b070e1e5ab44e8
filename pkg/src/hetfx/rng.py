"""Deterministic seed derivation.

All randomness flows from one master seed. Component sub-seeds are derived
by hashing the master seed together with a string tag, so that adding or
reordering components never shifts the streams of the others. Per-tree
streams inside a forest are ``seed XOR tree_index`` (handled in the forest
code); this module only provides the cross-component derivation.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(master: int, *tags) -> int:
    """Derive a 63-bit sub-seed from a master seed and hashable tags."""
    text = repr((int(master),) + tuple(tags)).encode("utf-8")
    digest = hashlib.sha256(text).digest()
    return int.from_bytes(digest[:8], "little") & _MASK63


def generator(seed: int) -> np.random.Generator:
    """PCG64 generator for a given integer seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))
