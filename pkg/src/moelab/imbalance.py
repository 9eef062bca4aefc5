"""Imbalance metrics over token-assignment counts.

Per-layer imbalance factor I (max load over mean load) and max violation
MV = I - 1, their weighted aggregation across layers, the mapping of expert
loads to GPU loads through a placement matrix, and percentile summaries of
aggregated imbalance across batches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError
from .stats import nearest_rank

PLACEMENT_COLUMN_TOL = 1e-9
WEIGHT_SUM_TOL = 1e-9


def layer_imbalance(counts: Sequence[float]) -> tuple[float, float]:
    """Imbalance factor and max violation of one layer's per-expert loads.

    I = max / mean and MV = I - 1. Loads may be fractional (GPU loads under
    fractional placement). A row with no load has no defined imbalance and
    raises; callers that aggregate should skip such layers explicitly.
    """
    row = np.asarray(counts, dtype=np.float64)
    if row.ndim != 1 or row.size < 1:
        raise InputError(f"count row must be a nonempty vector, got shape {row.shape}")
    if np.any(row < 0):
        raise InputError("counts must be nonnegative")
    total = float(row.sum())
    if total <= 0.0:
        raise InputError("imbalance undefined for an all-zero count row")
    mean = total / row.size
    i_factor = float(row.max()) / mean
    return i_factor, i_factor - 1.0


def gpu_imbalance(gpu_load_row: Sequence[float]) -> tuple[float, float]:
    """Same contract as :func:`layer_imbalance`, applied to per-GPU loads."""
    return layer_imbalance(gpu_load_row)


def uniform_weights(num_layers: int) -> np.ndarray:
    if num_layers < 1:
        raise InputError("need at least one layer")
    return np.full(num_layers, 1.0 / num_layers)


def normalize_weights(raw: Sequence[float]) -> np.ndarray:
    """Normalize nonnegative per-layer weights (e.g. FLOP counts) to sum 1."""
    w = np.asarray(raw, dtype=np.float64)
    if w.ndim != 1 or w.size < 1:
        raise InputError("weights must be a nonempty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InputError("weights must be finite and nonnegative")
    total = float(w.sum())
    if total <= 0:
        raise InputError("weights sum to zero")
    return w / total


def aggregate_imbalance(per_layer_i: Sequence[float], weights: Sequence[float]) -> float:
    """Layer-weighted sum of per-layer imbalance factors.

    Weights must be nonnegative and sum to 1 (uniform weights make this the
    arithmetic mean of the per-layer factors).
    """
    i_vec = np.asarray(per_layer_i, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if i_vec.shape != w.shape:
        raise InputError(
            f"got {i_vec.size} imbalance values but {w.size} weights")
    if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise InputError(f"weights sum to {w.sum()!r}, expected 1")
    return float(np.dot(w, i_vec))


def validate_placement(matrix, num_experts: int | None = None) -> np.ndarray:
    """Check a G x n placement matrix: nonnegative, every column sums to 1.

    Column e gives the fraction of expert e's tokens served on each GPU;
    pure placements use {0, 1} entries.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ConfigError(f"placement must be a 2-D matrix, got shape {a.shape}")
    if num_experts is not None and a.shape[1] != num_experts:
        raise ConfigError(
            f"placement has {a.shape[1]} expert columns, workload has {num_experts}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ConfigError("placement entries must be finite and nonnegative")
    col_sums = a.sum(axis=0)
    bad = np.where(np.abs(col_sums - 1.0) > PLACEMENT_COLUMN_TOL)[0]
    if bad.size:
        raise ConfigError(
            f"placement column {int(bad[0])} sums to {col_sums[bad[0]]!r}, expected 1")
    return a


def gpu_loads(counts, placement) -> np.ndarray:
    """Map per-expert counts [num_layers x n] to per-GPU loads [num_layers x G].

    N_{g,L} = sum_e A_{g,e} * N_{e,L}. Column-stochastic placement preserves
    each layer's total load.
    """
    c = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    a = validate_placement(placement, num_experts=c.shape[1])
    return c @ a.T


@dataclass(frozen=True)
class ImbalanceReport:
    """Per-layer and aggregated imbalance for one batch.

    Layers that received no load carry None in the per-layer vectors, are
    counted in ``skipped_layers``, and are excluded from the aggregate
    (weights renormalized over the observed layers). GPU-level fields are
    populated when a placement matrix is supplied.
    """

    per_layer_i: tuple
    per_layer_mv: tuple
    i_agg: float
    gpu_per_layer_i: tuple | None = None
    gpu_i_agg: float | None = None
    skipped_layers: int = 0


def batch_report(counts, weights, placement=None) -> ImbalanceReport:
    """Imbalance report for one batch's [num_layers x n] assignment counts."""
    c = np.atleast_2d(np.asarray(counts, dtype=np.float64))
    num_layers = c.shape[0]
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (num_layers,):
        raise InputError(
            f"got {num_layers} layers but {w.size} weights")
    per_i: list = [None] * num_layers
    per_mv: list = [None] * num_layers
    mask = np.zeros(num_layers, dtype=bool)
    for layer in range(num_layers):
        if c[layer].sum() > 0:
            per_i[layer], per_mv[layer] = layer_imbalance(c[layer])
            mask[layer] = True
    if not mask.any():
        raise InputError("every layer in the batch is empty")
    w_used = w[mask] / w[mask].sum()
    i_agg = aggregate_imbalance([per_i[l] for l in np.where(mask)[0]], w_used)

    gpu_per_i = None
    gpu_i_agg = None
    if placement is not None:
        mapped = gpu_loads(c, placement)
        gpu_per_i = [None] * num_layers
        for layer in np.where(mask)[0]:
            gpu_per_i[layer], _ = layer_imbalance(mapped[layer])
        gpu_i_agg = aggregate_imbalance(
            [gpu_per_i[l] for l in np.where(mask)[0]], w_used)
        gpu_per_i = tuple(gpu_per_i)

    return ImbalanceReport(
        per_layer_i=tuple(per_i), per_layer_mv=tuple(per_mv), i_agg=i_agg,
        gpu_per_layer_i=gpu_per_i, gpu_i_agg=gpu_i_agg,
        skipped_layers=int(num_layers - mask.sum()))


@dataclass(frozen=True)
class BatchSummary:
    """Percentile summary of aggregated imbalance across batches."""

    p50_iagg: float
    p95_iagg: float
    mean_iagg: float
    batch_count: int


def summarize_batches(iagg_samples: Sequence[float]) -> BatchSummary:
    """Nearest-rank P50/P95 and mean of per-batch aggregated imbalance."""
    samples = sorted(float(x) for x in iagg_samples)
    if not samples:
        raise InputError("no batch samples to summarize")
    return BatchSummary(
        p50_iagg=nearest_rank(samples, 0.50),
        p95_iagg=nearest_rank(samples, 0.95),
        mean_iagg=sum(samples) / len(samples),
        batch_count=len(samples),
    )
