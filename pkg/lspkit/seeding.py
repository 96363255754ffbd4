from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .errors import ContractViolation

SeedLike = Union[int, Sequence[int]]


def derive_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    """Generator for the stream ``(seed, *keys)``.

    Distinct key tuples give independent streams, so a new consumer never shifts the draws
    of an existing one.
    """
    entropy = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]
    entropy.extend(int(k) for k in keys)
    if any(e < 0 for e in entropy):
        raise ContractViolation(f"seed entropy must be non-negative, got {entropy}")
    return np.random.default_rng(np.random.SeedSequence(entropy))
