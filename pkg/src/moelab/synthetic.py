"""Synthetic gate-score workload generation.

Two per-band token generators model the layer profiles seen in real MoE
models: a symmetric Dirichlet for flat layers and a spiked generator for
skewed layers, where each token puts ``p_head`` mass on one expert (chosen
uniformly per token) and spreads the rest with a Dirichlet over the others.

Generation is deterministic for a fixed seed: one PCG64 stream, consumed in
(batch, layer) order, token rows drawn as a block per layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

from .errors import ConfigError
from .tracefile import Phase, TraceRecord


@dataclass(frozen=True)
class DirichletProfile:
    """Symmetric Dirichlet(alpha) rows; alpha = 1 is flat, large alpha
    concentrates toward the uniform vector."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"dirichlet alpha must be > 0, got {self.alpha}")

    def sample(self, rng: np.random.Generator, tokens: int, n: int) -> np.ndarray:
        return rng.dirichlet([self.alpha] * n, size=tokens)


@dataclass(frozen=True)
class SpikedProfile:
    """One dominant expert per token holding ``p_head`` of the mass.

    The head expert is drawn uniformly per token; the remaining 1 - p_head
    is spread over the other experts with Dirichlet(alpha_tail).
    """

    p_head: float
    alpha_tail: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_head < 1.0:
            raise ConfigError(f"p_head must be in (0, 1), got {self.p_head}")
        if not self.alpha_tail > 0:
            raise ConfigError(f"alpha_tail must be > 0, got {self.alpha_tail}")

    def sample(self, rng: np.random.Generator, tokens: int, n: int) -> np.ndarray:
        heads = rng.integers(0, n, size=tokens)
        out = np.empty((tokens, n))
        if n == 1:
            out[:] = 1.0
            return out
        tails = rng.dirichlet([self.alpha_tail] * (n - 1), size=tokens)
        for i in range(tokens):
            head = heads[i]
            out[i, head] = self.p_head
            rest = np.arange(n) != head
            out[i, rest] = (1.0 - self.p_head) * tails[i]
        return out


Profile = Union[DirichletProfile, SpikedProfile]


@dataclass(frozen=True)
class SyntheticBand:
    """Inclusive layer range [lo, hi] generated by one profile."""

    lo: int
    hi: int
    profile: Profile

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise ConfigError(f"synthetic band range [{self.lo}, {self.hi}] invalid")


@dataclass(frozen=True)
class SyntheticSpec:
    num_layers: int
    num_experts: int
    tokens_per_batch: int
    num_batches: int
    rng_seed: int
    bands: tuple[SyntheticBand, ...]

    def __post_init__(self):
        for name in ("num_layers", "num_experts", "tokens_per_batch", "num_batches"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        object.__setattr__(self, "bands", tuple(self.bands))
        covered = 0
        for band in sorted(self.bands, key=lambda b: b.lo):
            if band.lo != covered:
                raise ConfigError(
                    f"synthetic bands leave layers [{covered}..{band.lo - 1}] uncovered"
                    if band.lo > covered else
                    f"synthetic bands overlap at layer {band.lo}")
            covered = band.hi + 1
        if covered != self.num_layers:
            raise ConfigError(
                f"synthetic bands cover [0..{covered - 1}] but num_layers is "
                f"{self.num_layers}")

    def profile_for(self, layer: int) -> Profile:
        for band in self.bands:
            if band.lo <= layer <= band.hi:
                return band.profile
        raise ConfigError(f"layer {layer} outside synthetic bands")


def generate_matrices(spec: SyntheticSpec) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield (batch, layer, scores) with scores [tokens_per_batch x n] float64.

    Rows sum to 1 up to float round-off. The draw order is fixed, so a given
    seed always produces the same workload.
    """
    rng = np.random.default_rng(spec.rng_seed)
    profiles = [spec.profile_for(layer) for layer in range(spec.num_layers)]
    for batch in range(spec.num_batches):
        for layer in range(spec.num_layers):
            scores = profiles[layer].sample(
                rng, spec.tokens_per_batch, spec.num_experts)
            yield batch, layer, scores


def generate_synthetic(spec: SyntheticSpec) -> Iterator[TraceRecord]:
    """Yield trace records for the synthetic workload (float32 scores).

    Batches model decoding steps, so records carry the decode phase tag.
    """
    for batch, layer, scores in generate_matrices(spec):
        scores32 = scores.astype(np.float32)
        for token in range(scores32.shape[0]):
            yield TraceRecord(batch, layer, token, Phase.DECODE, scores32[token])
