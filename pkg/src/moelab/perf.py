"""Analytical performance model: GPU-level imbalance to step time, relative
throughput, and cost per token.

Step time is affine in aggregated GPU imbalance: gamma * I + C where C
collects the all-to-all and offload constants. With gamma = 1 and C = 0 the
model runs in dimensionless mode and ratios reduce to pure imbalance ratios.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InputError, ParameterError

SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class PerfParams:
    """Hardware calibration constants.

    gamma       seconds of critical-path compute per unit imbalance (> 0)
    t_comm      all-to-all communication time per step, seconds
    t_offload   CPU<->GPU transfer time per step under memory pressure, seconds
    gpu_price   price per GPU-hour
    gpu_count   GPUs in the fleet
    """

    gamma: float = 1.0
    t_comm: float = 0.0
    t_offload: float = 0.0
    gpu_price: float = 0.0
    gpu_count: int = 1

    def __post_init__(self):
        if self.gamma <= 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma}")
        if self.t_comm < 0 or self.t_offload < 0:
            raise ParameterError("t_comm and t_offload must be >= 0")
        if self.gpu_price < 0:
            raise ParameterError(f"gpu_price must be >= 0, got {self.gpu_price}")
        if self.gpu_count < 1:
            raise ParameterError(f"gpu_count must be >= 1, got {self.gpu_count}")

    @property
    def constant_term(self) -> float:
        return self.t_comm + self.t_offload


def step_time(i_agg_gpu: float, params: PerfParams) -> float:
    """Decoding step time: gamma * I + t_comm + t_offload, in seconds."""
    if i_agg_gpu < 1.0:
        raise InputError(f"aggregated imbalance must be >= 1, got {i_agg_gpu}")
    return params.gamma * i_agg_gpu + params.constant_term


def throughput_ratio(i_policy: float, i_base: float, params: PerfParams) -> float:
    """Throughput of a policy relative to a baseline.

    Exact form (gamma * I_base + C) / (gamma * I_policy + C); with C = 0 this
    is the plain imbalance ratio I_base / I_policy.
    """
    if i_policy < 1.0 or i_base < 1.0:
        raise InputError("imbalance factors must be >= 1")
    c = params.constant_term
    return (params.gamma * i_base + c) / (params.gamma * i_policy + c)


def cost_per_token(t_token: float, params: PerfParams) -> float:
    """Fleet cost attributed to one token: (price * gpus / 3600) * t_token."""
    if t_token < 0:
        raise InputError(f"t_token must be >= 0, got {t_token}")
    return params.gpu_price * params.gpu_count / SECONDS_PER_HOUR * t_token


@dataclass(frozen=True)
class PerfEstimate:
    """Derived performance figures for one policy run."""

    t_step: float
    throughput_ratio_vs_base: float
    cost_per_token: float

    def __post_init__(self):
        if self.throughput_ratio_vs_base <= 0:
            raise InputError("throughput ratio must be positive")

    def as_dict(self) -> dict:
        return {"t_step": self.t_step,
                "throughput_ratio_vs_base": self.throughput_ratio_vs_base,
                "cost_per_token": self.cost_per_token}


def estimate_performance(i_agg_gpu: float, i_base: float, params: PerfParams,
                         tokens_per_step: float) -> PerfEstimate:
    """Bundle the three model outputs for one policy.

    ``tokens_per_step`` divides the step cost across the tokens one decoding
    step produces; pass 1 to report per-step cost directly.
    """
    t = step_time(i_agg_gpu, params)
    t_token = t / tokens_per_step if tokens_per_step > 0 else t
    return PerfEstimate(
        t_step=t,
        throughput_ratio_vs_base=throughput_ratio(i_agg_gpu, i_base, params),
        cost_per_token=cost_per_token(t_token, params))
