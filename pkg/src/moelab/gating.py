"""Gate-score distribution analytics.

Shape statistics of per-token gate scores (top-k mass, Shannon entropy,
regime labels), their per-layer aggregation, and the calibration heuristic
that turns prefill statistics into per-band router parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InputError, ParameterError
from .routing import Band, BandParams, LaserParams, TrimMode
from .stats import nearest_rank

# Regime thresholds. The regimes themselves are qualitative; these cutoffs
# make them deterministic and are configurable everywhere they are used.
DEFAULT_TAU_DOM = 0.6
DEFAULT_TAU_PLATEAU = 0.8

# Vectors whose sum deviates from 1 by more than this are rejected rather
# than renormalized; real traces only carry float round-off.
RENORM_TOLERANCE = 1e-3
SUM_TOLERANCE = 1e-6


class RegimeLabel(str, Enum):
    SINGLE_HEAD = "single_head"
    PLATEAU = "plateau"
    SMOOTH = "smooth"


def validate_scores(raw, renorm_tol: float = RENORM_TOLERANCE) -> np.ndarray:
    """Validate and normalize a gate-score vector at ingest.

    Returns a float64 probability vector. Entries must be finite and
    nonnegative with at least one positive; sums within ``renorm_tol`` of 1
    are renormalized, larger deviations are rejected.
    """
    s = np.asarray(raw, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise InputError(f"gate scores must be a nonempty vector, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InputError("gate scores contain non-finite entries")
    if np.any(s < 0.0):
        raise InputError("gate scores contain negative entries")
    total = float(s.sum())
    if total <= 0.0:
        raise InputError("gate scores are all zero")
    if abs(total - 1.0) > renorm_tol:
        raise InputError(
            f"gate scores sum to {total:.6g}, outside renormalization "
            f"tolerance {renorm_tol:g}")
    if abs(total - 1.0) > SUM_TOLERANCE:
        s = s / total
    return s


def top_k_mass(s: Sequence[float], k: int) -> float:
    """Sum of the k largest gate scores; 1 for any one-hot vector with k >= 1."""
    n = len(s)
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    arr = np.asarray(s, dtype=np.float64)
    if k == n:
        return float(arr.sum())
    part = np.partition(arr, n - k)
    return float(part[n - k:].sum())


def entropy(s: Sequence[float], normalized: bool = False) -> float:
    """Shannon entropy in nats, with the 0*ln(0) = 0 convention. Range [0, ln n].

    ``normalized`` divides by ln(n) to report on [0, 1]; a single-expert
    vector normalizes to 0.
    """
    arr = np.asarray(s, dtype=np.float64)
    nz = arr[arr > 0.0]
    if nz.size == 0:
        return 0.0
    h = float(max(0.0, -np.sum(nz * np.log(nz))))
    if normalized:
        return h / math.log(arr.size) if arr.size > 1 else 0.0
    return h


def classify_regime(
    s: Sequence[float],
    tau_dom: float = DEFAULT_TAU_DOM,
    tau_plateau: float = DEFAULT_TAU_PLATEAU,
) -> RegimeLabel:
    """Label the shape of a gate-score vector.

    single_head when the top score reaches ``tau_dom``; otherwise plateau
    when the runner-up is within ``tau_plateau`` of the leader (ratio test,
    hence scale-invariant); otherwise smooth. Vectors with a single expert
    are always single_head.
    """
    if not 0.0 < tau_dom < 1.0:
        raise ParameterError(f"tau_dom must be in (0, 1), got {tau_dom}")
    if not 0.0 < tau_plateau <= 1.0:
        raise ParameterError(f"tau_plateau must be in (0, 1], got {tau_plateau}")
    arr = np.asarray(s, dtype=np.float64)
    if arr.size < 2:
        return RegimeLabel.SINGLE_HEAD
    two = np.partition(arr, arr.size - 2)[-2:]
    s1 = float(two.max())
    s2 = float(two.min())
    if s1 >= tau_dom:
        return RegimeLabel.SINGLE_HEAD
    if s1 > 0.0 and s2 / s1 >= tau_plateau:
        return RegimeLabel.PLATEAU
    return RegimeLabel.SMOOTH


@dataclass(frozen=True)
class LayerStats:
    """Distribution-shape summary of one layer's gate scores."""

    layer_index: int
    mean_Mk: float
    entropy_p25: float
    entropy_p50: float
    entropy_p75: float
    regime_fractions: tuple[float, float, float]  # (single_head, plateau, smooth)
    token_count: int

    CSV_HEADER = ("layer,mean_Mk,entropy_p25,entropy_p50,entropy_p75,"
                  "frac_single_head,frac_plateau,frac_smooth,tokens")

    def csv_row(self) -> str:
        f = self.regime_fractions
        return (f"{self.layer_index},{self.mean_Mk!r},{self.entropy_p25!r},"
                f"{self.entropy_p50!r},{self.entropy_p75!r},"
                f"{f[0]!r},{f[1]!r},{f[2]!r},{self.token_count}")


class LayerAccumulator:
    """Streaming accumulator for one layer's statistics.

    Addition is a commutative-monoid merge: accumulating two partial streams
    and merging gives the same result as one sequential pass (means via
    summed totals; entropy percentiles recomputed from the retained samples).
    """

    __slots__ = ("mk_sum", "entropies", "regime_counts", "count")

    def __init__(self):
        self.mk_sum = 0.0
        self.entropies: list[float] = []
        self.regime_counts = {r: 0 for r in RegimeLabel}
        self.count = 0

    def add(self, s: Sequence[float], k: int, tau_dom: float, tau_plateau: float):
        self.mk_sum += top_k_mass(s, k)
        self.entropies.append(entropy(s))
        self.regime_counts[classify_regime(s, tau_dom, tau_plateau)] += 1
        self.count += 1

    def merge(self, other: "LayerAccumulator") -> "LayerAccumulator":
        out = LayerAccumulator()
        out.mk_sum = self.mk_sum + other.mk_sum
        out.entropies = self.entropies + other.entropies
        out.regime_counts = {
            r: self.regime_counts[r] + other.regime_counts[r] for r in RegimeLabel}
        out.count = self.count + other.count
        return out

    def finalize(self, layer_index: int) -> LayerStats:
        if self.count == 0:
            raise InputError(f"layer {layer_index} has no tokens")
        ent = sorted(self.entropies)
        fractions = tuple(
            self.regime_counts[r] / self.count
            for r in (RegimeLabel.SINGLE_HEAD, RegimeLabel.PLATEAU, RegimeLabel.SMOOTH))
        return LayerStats(
            layer_index=layer_index,
            mean_Mk=self.mk_sum / self.count,
            entropy_p25=nearest_rank(ent, 0.25),
            entropy_p50=nearest_rank(ent, 0.50),
            entropy_p75=nearest_rank(ent, 0.75),
            regime_fractions=fractions,
            token_count=self.count,
        )


def aggregate_layer_stats(
    tokens: Iterable[tuple[int, Sequence[float]]],
    k: int,
    tau_dom: float = DEFAULT_TAU_DOM,
    tau_plateau: float = DEFAULT_TAU_PLATEAU,
) -> list[LayerStats]:
    """Per-layer statistics over a stream of (layer_index, gate scores).

    Layers that never appear are omitted; an empty stream yields an empty
    list. Results are ordered by layer index.
    """
    accs: dict[int, LayerAccumulator] = {}
    for layer_index, s in tokens:
        acc = accs.get(layer_index)
        if acc is None:
            acc = accs[layer_index] = LayerAccumulator()
        acc.add(s, k, tau_dom, tau_plateau)
    return [accs[layer].finalize(layer) for layer in sorted(accs)]


def suggest_parameters(
    prefill_stats: Sequence[LayerStats],
    bands: Sequence[tuple[int, int]],
    target_expansion_rate: float,
    k: int,
    c: int,
    t_fix: float = 0.6,
    trim_mode: TrimMode = TrimMode.TOP,
    rng_seed: int = 0,
) -> BandParams:
    """Calibrate per-band dominance cutoffs from prefill statistics.

    For each band, eps_high is the empirical quantile of the member layers'
    mean top-k mass that leaves a (1 - target) fraction of layers above the
    cutoff: routing stays top-k wherever the mass is typically high, and
    roughly a ``target_expansion_rate`` fraction of the band sits below the
    cutoff where expansion kicks in. The cutoff is clamped into (0, 1).

    ``bands`` is an ordered list of inclusive (lo, hi) layer ranges covering
    every layer present in ``prefill_stats``. t_fix is not calibrated here
    and defaults to 0.6; pass per-band values by editing the result.
    """
    if not 0.0 < target_expansion_rate < 1.0:
        raise ParameterError(
            f"target_expansion_rate must be in (0, 1), got {target_expansion_rate}")
    by_layer = {st.layer_index: st for st in prefill_stats}
    out = []
    for lo, hi in bands:
        masses = [by_layer[l].mean_Mk for l in range(lo, hi + 1) if l in by_layer]
        if not masses:
            raise ConfigError(f"band [{lo}, {hi}] contains no observed layers")
        # Upper-tail quantile: the value exceeded by ~(1 - target) of samples.
        eps = nearest_rank(sorted(masses), target_expansion_rate)
        eps = min(max(eps, 1e-9), 1.0 - 1e-9)
        out.append(Band(lo, hi, LaserParams(
            k=k, eps_high=eps, t_fix=t_fix, c=c,
            trim_mode=trim_mode, rng_seed=rng_seed)))
    return BandParams(tuple(out))
