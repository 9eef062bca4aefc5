"""Routing policies for MoE inference: vanilla top-k, load-only, and the
load- and score-aware expert router (LASER).

All three policies consume a per-token gate-score vector and return a
``RoutingDecision`` naming the k selected experts. LASER additionally reads
the per-expert load counters and, when the score distribution is flat enough,
widens the candidate set and prefers the least-loaded experts in it.

Every rule here is deterministic given its inputs. The only randomness is
LASER's optional Random trim mode, which consumes an explicit numpy
``Generator``; the sampling procedure is pinned (see ``route_laser``) so an
independent implementation fed the same generator reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, ParameterError

# Identifier of the pseudo-random generator used for Random trimming and for
# synthetic workloads; recorded in experiment metadata for reproducibility.
RNG_ALGORITHM = "numpy-pcg64"


class TrimMode(str, Enum):
    TOP = "top"
    RANDOM = "random"


class RoutePath(str, Enum):
    """How a decision was produced: straight top-k, or the expanded pool."""

    SKEWED_TOPK = "skewed_topk"
    EXPANDED = "expanded"


@dataclass(frozen=True)
class RoutingDecision:
    """Outcome of routing one token in one layer.

    ``selected`` is ordered: for the top-k path by descending score, for the
    expanded path by the (load asc, score desc, index asc) sort. ``pool_size``
    is the candidate pool size m and ``working_set_size`` the trimmed size
    c*; both degenerate to k on the top-k path.
    """

    selected: tuple[int, ...]
    path: RoutePath
    pool_size: int
    working_set_size: int


@dataclass(frozen=True)
class LaserParams:
    """Per-band knobs of the load- and score-aware router.

    k          experts activated per token
    eps_high   dominance cutoff on the top-k mass; at or above it the router
               keeps plain top-k. 1.0 means "always expand" (top-k mass only
               reaches 1.0 on degenerate vectors).
    t_fix      score-ratio cutoff for pool membership, relative to the max score
    c          cap on the working set examined for load (k <= c <= n)
    trim_mode  how to shrink a pool larger than c: keep the c highest-scoring
               members, or sample c uniformly without replacement
    rng_seed   seed for the Random trim stream (recorded for reproducibility)
    """

    k: int
    eps_high: float
    t_fix: float
    c: int
    trim_mode: TrimMode = TrimMode.TOP
    rng_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.eps_high <= 1.0:
            raise ParameterError(f"eps_high must be in (0, 1], got {self.eps_high}")
        if not 0.0 < self.t_fix <= 1.0:
            raise ParameterError(f"t_fix must be in (0, 1], got {self.t_fix}")
        if self.c < self.k:
            raise ParameterError(f"c must be >= k ({self.k}), got {self.c}")
        if not isinstance(self.trim_mode, TrimMode):
            object.__setattr__(self, "trim_mode", TrimMode(self.trim_mode))


@dataclass(frozen=True)
class Band:
    """Inclusive layer range [lo, hi] sharing one parameter set."""

    lo: int
    hi: int
    params: LaserParams

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise ConfigError(f"band range [{self.lo}, {self.hi}] is invalid")


@dataclass(frozen=True)
class BandParams:
    """Ordered layer bands covering [0, num_layers - 1] without gaps."""

    bands: tuple[Band, ...]
    num_layers: int = field(default=0)

    def __post_init__(self):
        bands = tuple(self.bands)
        object.__setattr__(self, "bands", bands)
        if not bands:
            raise ConfigError("band list is empty")
        num_layers = self.num_layers or bands[-1].hi + 1
        object.__setattr__(self, "num_layers", num_layers)
        ordered = sorted(bands, key=lambda b: b.lo)
        cursor = 0
        for band in ordered:
            if band.lo != cursor:
                lo, hi = cursor, band.lo - 1
                raise ConfigError(f"uncovered layers [{lo}..{hi}]" if hi >= lo
                                  else f"overlapping bands at layer {band.lo}")
            cursor = band.hi + 1
        if cursor < num_layers:
            raise ConfigError(f"uncovered layers [{cursor}..{num_layers - 1}]")
        if cursor > num_layers:
            raise ConfigError(
                f"bands extend to layer {cursor - 1} but num_layers is {num_layers}")
        object.__setattr__(self, "bands", tuple(ordered))

    def resolve(self, layer_index: int) -> LaserParams:
        return resolve_band(self, layer_index)

    def with_c(self, c: int) -> "BandParams":
        """Copy with every band's working-set cap replaced (used by sweeps)."""
        new = tuple(
            Band(b.lo, b.hi, LaserParams(
                k=b.params.k, eps_high=b.params.eps_high, t_fix=b.params.t_fix,
                c=c, trim_mode=b.params.trim_mode, rng_seed=b.params.rng_seed))
            for b in self.bands)
        return BandParams(new, self.num_layers)


def resolve_band(bands: BandParams, layer_index: int) -> LaserParams:
    """Parameters of the unique band containing ``layer_index``."""
    for band in bands.bands:
        if band.lo <= layer_index <= band.hi:
            return band.params
    raise ConfigError(
        f"layer {layer_index} is outside the configured bands "
        f"[0..{bands.num_layers - 1}]")


def top_k_indices(s: Sequence[float], k: int) -> list[int]:
    """Indices of the k largest scores, descending; score ties by ascending index."""
    n = len(s)
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    return sorted(range(n), key=lambda i: (-s[i], i))[:k]


def route_vanilla_topk(s: Sequence[float], k: int) -> RoutingDecision:
    """Baseline policy: the k highest-scoring experts, loads ignored."""
    selected = top_k_indices(s, k)
    return RoutingDecision(tuple(selected), RoutePath.SKEWED_TOPK, k, k)


def route_load_only(loads: Sequence[int], k: int) -> RoutingDecision:
    """Baseline policy: the k least-loaded experts, scores ignored.

    Ties break by ascending expert index. Reported with the expanded path
    label and a pool spanning all n experts, since every expert is a
    candidate.
    """
    n = len(loads)
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    selected = sorted(range(n), key=lambda i: (loads[i], i))[:k]
    return RoutingDecision(tuple(selected), RoutePath.EXPANDED, n, n)


def route_laser(
    s: Sequence[float],
    loads: Sequence[int],
    params: LaserParams,
    rng: np.random.Generator | None = None,
) -> RoutingDecision:
    """Route one token with the load- and score-aware policy.

    Steps, in order:

    1. If the top-k mass M_k is at or above ``eps_high``, return the plain
       top-k set (skewed path; loads are never consulted).
    2. Otherwise set the cutoff t = t_fix * max(s) and form the candidate
       pool {i : s_i >= t}, always unioned with the top-k set so the pool
       has at least k members. m is the pool size.
    3. Trim the pool to c* = min(c, m) members: Top mode keeps the c*
       highest-scoring (ties by ascending index); Random mode takes a
       Fisher-Yates prefix of length c* over the pool in ascending-index
       order, drawing ``rng.integers(0, m - j)`` at step j. One draw is
       consumed per step even when only one choice remains, so the stream
       position is a pure function of (m, c*).
    4. Sort the working set by ascending load, ties by descending score,
       residual ties by ascending index, and return the first k.

    ``s`` must be a validated gate-score vector (nonnegative, near-unit sum);
    use :func:`moelab.gating.validate_scores` on untrusted data first.
    """
    n = len(s)
    if len(loads) != n:
        raise InputError(
            f"scores have {n} experts but loads have {len(loads)}")
    k = params.k
    if k > n:
        raise ParameterError(f"k={k} exceeds expert count {n}")
    if params.c > n:
        raise ParameterError(f"c={params.c} exceeds expert count {n}")
    if k == n:
        # All experts are activated; pool and trim logic cannot change the set.
        order = sorted(range(n), key=lambda i: (-s[i], i))
        return RoutingDecision(tuple(order), RoutePath.SKEWED_TOPK, n, n)

    order = sorted(range(n), key=lambda i: (-s[i], i))
    topk = order[:k]
    mk = 0.0
    for i in topk:
        mk += s[i]
    if mk >= params.eps_high:
        return RoutingDecision(tuple(topk), RoutePath.SKEWED_TOPK, k, k)

    t = params.t_fix * s[order[0]]
    pool = [i for i in range(n) if s[i] >= t]
    pool_set = set(pool)
    if not pool_set.issuperset(topk):
        pool_set.update(topk)
        pool = sorted(pool_set)
    m = len(pool)
    c_star = min(params.c, m)

    if params.trim_mode is TrimMode.TOP:
        working = sorted(pool, key=lambda i: (-s[i], i))[:c_star]
    else:
        if rng is None:
            raise ParameterError("Random trim mode requires an rng")
        working = list(pool)  # ascending index: the canonical pool order
        for j in range(c_star):
            swap = j + int(rng.integers(0, m - j))
            working[j], working[swap] = working[swap], working[j]
        working = working[:c_star]

    working.sort(key=lambda i: (loads[i], -s[i], i))
    return RoutingDecision(tuple(working[:k]), RoutePath.EXPANDED, m, c_star)


def update_loads(loads: Sequence[int], decision: RoutingDecision) -> np.ndarray:
    """New load vector with each selected expert's count incremented by one."""
    out = np.array(loads, dtype=np.int64)
    for e in decision.selected:
        if not 0 <= e < out.size:
            raise InputError(f"selected expert {e} out of range [0, {out.size})")
        out[e] += 1
    return out
