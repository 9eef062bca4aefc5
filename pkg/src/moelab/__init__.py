"""moelab: a routing laboratory for Mixture-of-Experts inference.

Implements the load- and score-aware expert router (LASER) alongside the
vanilla top-k and load-only baselines, gate-score distribution analytics,
expert- and GPU-level imbalance metrics, an analytical performance model,
and a synthetic/replayed workload harness.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, InputError, MoeLabError, ParameterError,
                     TraceFormatError)
from .gating import (LayerStats, RegimeLabel, aggregate_layer_stats,
                     classify_regime, entropy, suggest_parameters,
                     top_k_mass, validate_scores)
from .imbalance import (BatchSummary, ImbalanceReport, aggregate_imbalance,
                        batch_report, gpu_imbalance, gpu_loads,
                        layer_imbalance, summarize_batches,
                        validate_placement)
from .perf import (PerfEstimate, PerfParams, cost_per_token,
                   estimate_performance, step_time, throughput_ratio)
from .presets import PRESETS, band_params_from_preset, get_preset
from .routing import (Band, BandParams, LaserParams, RoutePath,
                      RoutingDecision, TrimMode, resolve_band, route_laser,
                      route_load_only, route_vanilla_topk, update_loads)
from .synthetic import (DirichletProfile, SpikedProfile, SyntheticBand,
                        SyntheticSpec, generate_synthetic)
from .tracefile import (Phase, TraceHeader, TraceRecord, TraceWriter,
                        read_trace, replay_trace, write_trace)

__all__ = [name for name in dir() if not name.startswith("_")]
