"""Deterministic seed derivation.

Every random decision in the pipeline draws from a generator whose seed is
derived by hashing the run's master seed together with string tags (farm,
cow, frame, repeat, parameter name, ...). Derivation is order-independent
across work items: shuffling the processing order of frames or jobs cannot
change any individual result.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Hash the parts into a stable 63-bit seed."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def derive_rng(*parts: object) -> np.random.Generator:
    """A fresh generator seeded from the hashed parts."""
    return np.random.default_rng(derive_seed(*parts))
