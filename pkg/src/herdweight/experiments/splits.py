"""Cow-level partitioning: 60:40 train/test, then 80:20 subtrain/validation.

All frames of a cow follow the cow. Fractions floor toward the first
partition with at least one cow left on each side, so small herds stay
usable. The same seed always reproduces the same partition regardless of
processing order (ids are sorted before shuffling).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import PartitionError


@dataclass(frozen=True)
class SplitPlan:
    repeat_index: int
    seed: int
    train_cows: tuple[str, ...]
    test_cows: tuple[str, ...]
    subtrain_cows: tuple[str, ...]
    val_cows: tuple[str, ...]
    design: str = ""
    scenario: str = "none"

    def __post_init__(self):
        if set(self.train_cows) & set(self.test_cows):
            raise PartitionError("train and test share cows")
        if set(self.subtrain_cows) & set(self.val_cows):
            raise PartitionError("subtrain and validation share cows")


def _split_once(ids: list, frac: float, rng: np.random.Generator) -> tuple[list, list]:
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_first = int(np.floor(frac * len(ids)))
    n_first = max(1, min(n_first, len(ids) - 1))
    return order[:n_first], order[n_first:]


def split_pool(cow_ids, seed: int, frac: float = 0.8) -> tuple[tuple, tuple]:
    """One seeded split of an arbitrary cow pool (used for subtrain/val of
    joint and transfer-source pools)."""
    ids = sorted(cow_ids)
    if len(ids) < 2:
        raise PartitionError(f"cannot split {len(ids)} cows")
    rng = np.random.default_rng(seed)
    first, second = _split_once(ids, frac, rng)
    return tuple(first), tuple(second)


def split_cows(cow_ids, seed: int, repeat_index: int = 0,
               train_frac: float = 0.6, subtrain_frac: float = 0.8) -> SplitPlan:
    """Shuffle cows with the repeat seed; 60:40 train/test, then 80:20
    subtrain/validation within train."""
    ids = sorted(cow_ids)
    if len(set(ids)) != len(ids):
        raise PartitionError("duplicate cow ids in split input")
    if len(ids) < 5:
        raise PartitionError(f"need at least 5 cows to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    train, test = _split_once(ids, train_frac, rng)
    if len(train) < 2:
        raise PartitionError("train partition too small to subdivide")
    subtrain, val = _split_once(train, subtrain_frac, rng)
    return SplitPlan(repeat_index, seed, tuple(train), tuple(test),
                     tuple(subtrain), tuple(val))
