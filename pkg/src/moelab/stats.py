"""Order-statistics helpers shared by the analytics and metrics modules."""

import math
from typing import Sequence

from .errors import InputError, ParameterError


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile of an ascending-sorted sample.

    Uses the classic definition: the value at rank ceil(p * N) (1-indexed).
    Deterministic and platform-independent, unlike interpolating methods.
    p50 of [1..100] is 50, p95 is 95.
    """
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"percentile level must be in (0, 1], got {p}")
    n = len(sorted_values)
    if n == 0:
        raise InputError("nearest_rank: empty sample")
    rank = max(1, math.ceil(p * n))
    return float(sorted_values[rank - 1])


def quantile(values: Sequence[float], p: float) -> float:
    """Nearest-rank quantile of an unsorted sample."""
    return nearest_rank(sorted(values), p)
