from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from saferoute.errors import InvalidArgumentError


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Largest-remainder rounding of ``n * ratios``; leftover units go to the largest fractional parts, ties to earlier splits."""
    if n < 0:
        raise InvalidArgumentError("n must be non-negative")
    ratios = [float(r) for r in ratios]
    if not ratios or any(not r > 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgumentError("ratios must be positive and sum to 1")
    exact = [n * r for r in ratios]
    sizes = [math.floor(e + 1e-9) for e in exact]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return tuple(sizes)


def split_dataset(n: int, ratios: Sequence[float], seed: int) -> tuple[np.ndarray, ...]:
    """Disjoint, exhaustive index sets (train, validation, calibration, test) from one seeded permutation."""
    sizes = split_sizes(n, ratios)
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum((0,) + sizes)
    return tuple(np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(len(sizes)))
