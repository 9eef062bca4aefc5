"""Experiment configuration: schema validation, preset expansion, overrides.

A config file is a single YAML document. Unknown keys are rejected at every
level. CLI flags override file fields last-wins. ``resolve_config`` expands
presets and external files (FLOP weights, placement) into an explicit
"effective" document; re-running from that document reproduces the run
byte-for-byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .imbalance import normalize_weights, validate_placement
from .perf import PerfParams
from .presets import band_params_from_preset, get_preset, thirds_bands
from .routing import Band, BandParams, LaserParams, TrimMode
from .synthetic import (DirichletProfile, SpikedProfile, SyntheticBand,
                        SyntheticSpec)
from .tracefile import read_header

POLICY_NAMES = ("vanilla", "load_only", "laser")
LOAD_RESET_MODES = ("batch", "cumulative")
OUT_DIR_ENV = "MOELAB_OUT_DIR"
DEFAULT_OUT_DIR = "moelab-out"


def _require_mapping(obj, path: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(obj).__name__}")
    return obj


def _check_keys(mapping: dict, allowed: set[str], path: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}")


def _get_int(mapping: dict, key: str, path: str, minimum: int | None = None) -> int:
    value = mapping.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}, got {value}")
    return value


def _get_number(mapping: dict, key: str, path: str, default=None) -> float:
    value = mapping.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
    return float(value)


def _layer_range(obj, path: str) -> tuple[int, int]:
    if (not isinstance(obj, (list, tuple)) or len(obj) != 2
            or not all(isinstance(x, int) for x in obj)):
        raise ConfigError(f"{path}: expected [lo, hi], got {obj!r}")
    return int(obj[0]), int(obj[1])


@dataclass
class ExperimentConfig:
    """Fully resolved experiment: every field explicit, files inlined."""

    k: int
    num_layers: int
    num_experts: int
    policies: tuple[str, ...]
    trace_path: Path | None
    synthetic: SyntheticSpec | None
    laser_bands: BandParams | None
    sweep_c: tuple[int, ...] | None
    weights: np.ndarray
    placement: np.ndarray | None
    perf: PerfParams | None
    load_reset: str
    seed: int
    out_dir: Path
    effective: dict = field(repr=False)


def load_config_file(path) -> dict:
    """Parse a YAML config document. Parse errors keep YAML's line info."""
    try:
        with open(path, "r") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    if doc is None:
        doc = {}
    return _require_mapping(doc, str(path))


def apply_overrides(doc: dict, overrides: dict[str, Any]) -> dict:
    """Merge CLI overrides into a config document, last-wins.

    Recognized override keys: preset, seed, out_dir, load_reset, policies
    (list of names), weights (parsed value), placement (path), sweep_c.
    """
    out = dict(doc)
    for key, value in overrides.items():
        if value is None:
            continue
        out[key] = value
    return out


def _parse_synthetic(obj, path: str) -> SyntheticSpec:
    m = _require_mapping(obj, path)
    _check_keys(m, {"num_layers", "num_experts", "tokens_per_batch",
                    "num_batches", "seed", "bands"}, path)
    num_layers = _get_int(m, "num_layers", path, 1)
    num_experts = _get_int(m, "num_experts", path, 1)
    tokens = _get_int(m, "tokens_per_batch", path, 1)
    batches = _get_int(m, "num_batches", path, 1)
    seed = _get_int({"seed": m.get("seed", 0)}, "seed", path)
    bands_doc = m.get("bands")
    if not isinstance(bands_doc, list) or not bands_doc:
        raise ConfigError(f"{path}.bands: expected a nonempty list")
    bands = []
    for i, b in enumerate(bands_doc):
        bpath = f"{path}.bands[{i}]"
        bm = _require_mapping(b, bpath)
        _check_keys(bm, {"layers", "profile", "alpha", "p_head", "alpha_tail"}, bpath)
        lo, hi = _layer_range(bm.get("layers"), f"{bpath}.layers")
        kind = bm.get("profile")
        if kind == "dirichlet":
            profile = DirichletProfile(alpha=_get_number(bm, "alpha", bpath, 1.0))
        elif kind == "spiked":
            profile = SpikedProfile(
                p_head=_get_number(bm, "p_head", bpath),
                alpha_tail=_get_number(bm, "alpha_tail", bpath, 1.0))
        else:
            raise ConfigError(
                f"{bpath}.profile: expected 'dirichlet' or 'spiked', got {kind!r}")
        bands.append(SyntheticBand(lo, hi, profile))
    return SyntheticSpec(num_layers, num_experts, tokens, batches, seed,
                         tuple(bands))


def _synthetic_to_doc(spec: SyntheticSpec) -> dict:
    bands = []
    for b in spec.bands:
        if isinstance(b.profile, DirichletProfile):
            bands.append({"layers": [b.lo, b.hi], "profile": "dirichlet",
                          "alpha": b.profile.alpha})
        else:
            bands.append({"layers": [b.lo, b.hi], "profile": "spiked",
                          "p_head": b.profile.p_head,
                          "alpha_tail": b.profile.alpha_tail})
    return {"num_layers": spec.num_layers, "num_experts": spec.num_experts,
            "tokens_per_batch": spec.tokens_per_batch,
            "num_batches": spec.num_batches, "seed": spec.rng_seed,
            "bands": bands}


def _parse_laser(obj, path: str, k: int, num_layers: int, num_experts: int,
                 seed: int) -> BandParams:
    m = _require_mapping(obj, path)
    _check_keys(m, {"c", "trim", "eps_high", "t_fix", "bands", "seed"}, path)
    trim = m.get("trim", "top")
    if trim not in ("top", "random"):
        raise ConfigError(f"{path}.trim: expected 'top' or 'random', got {trim!r}")
    trim_mode = TrimMode(trim)
    rng_seed = m.get("seed", seed)
    if not isinstance(rng_seed, int) or isinstance(rng_seed, bool):
        raise ConfigError(f"{path}.seed: expected an integer, got {rng_seed!r}")
    default_c = m.get("c", min(k + 2, num_experts))
    if not isinstance(default_c, int) or isinstance(default_c, bool):
        raise ConfigError(f"{path}.c: expected an integer, got {default_c!r}")
    default_eps = m.get("eps_high")
    default_tfix = m.get("t_fix", 0.6)

    bands_doc = m.get("bands")
    if bands_doc is None:
        if default_eps is None:
            raise ConfigError(
                f"{path}: needs either 'bands' or a scalar 'eps_high'")
        ranges = [(0, num_layers - 1)]
        bands_doc = [{"layers": list(r), "eps_high": default_eps,
                      "t_fix": default_tfix, "c": default_c} for r in ranges]
    if not isinstance(bands_doc, list) or not bands_doc:
        raise ConfigError(f"{path}.bands: expected a nonempty list")
    bands = []
    for i, b in enumerate(bands_doc):
        bpath = f"{path}.bands[{i}]"
        bm = _require_mapping(b, bpath)
        _check_keys(bm, {"layers", "eps_high", "t_fix", "c"}, bpath)
        lo, hi = _layer_range(bm.get("layers"), f"{bpath}.layers")
        eps = bm.get("eps_high", default_eps)
        if eps is None:
            raise ConfigError(f"{bpath}: missing eps_high")
        tfx = bm.get("t_fix", default_tfix)
        c = bm.get("c", default_c)
        try:
            params = LaserParams(k=k, eps_high=float(eps), t_fix=float(tfx),
                                 c=int(c), trim_mode=trim_mode, rng_seed=rng_seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{bpath}: {exc}") from None
        if params.c > num_experts:
            raise ConfigError(
                f"{bpath}: c={params.c} exceeds num_experts={num_experts}")
        bands.append(Band(lo, hi, params))
    try:
        return BandParams(tuple(bands), num_layers)
    except ConfigError as exc:
        raise ConfigError(f"{path}.bands: {exc}") from None


def _laser_to_doc(bands: BandParams) -> dict:
    first = bands.bands[0].params
    return {
        "trim": first.trim_mode.value,
        "seed": first.rng_seed,
        "bands": [{"layers": [b.lo, b.hi], "eps_high": b.params.eps_high,
                   "t_fix": b.params.t_fix, "c": b.params.c}
                  for b in bands.bands],
    }


def _load_column_file(path: Path) -> list[float]:
    values = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for part in line.replace(",", " ").split():
            values.append(float(part))
    if not values:
        raise ConfigError(f"{path}: no numeric values found")
    return values


def _load_matrix_file(path: Path) -> list[list[float]]:
    rows = []
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([float(x) for x in line.replace(",", " ").split()])
    if not rows:
        raise ConfigError(f"{path}: no numeric rows found")
    return rows


def parse_weights_flag(text: str):
    """Parse the --weights flag: 'uniform' or 'flops:<path>'."""
    if text == "uniform":
        return "uniform"
    if text.startswith("flops:"):
        return {"flops": text[len("flops:"):]}
    raise ConfigError(
        f"--weights expects 'uniform' or 'flops:<path>', got {text!r}")


def resolve_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a merged config document and resolve it for execution."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    doc = _require_mapping(doc, "config")
    _check_keys(doc, {"preset", "k", "policy", "policies", "seed", "load_reset",
                      "out_dir", "weights", "placement", "perf", "sweep_c",
                      "workload", "laser"}, "config")

    preset = get_preset(doc["preset"]) if "preset" in doc else None

    # Workload first: the layer/expert counts anchor everything else.
    workload = _require_mapping(doc.get("workload"), "config.workload")
    _check_keys(workload, {"trace", "synthetic"}, "config.workload")
    trace_path = workload.get("trace")
    synthetic_doc = workload.get("synthetic")
    if (trace_path is None) == (synthetic_doc is None):
        raise ConfigError(
            "config.workload: exactly one of 'trace' or 'synthetic' is required")
    synthetic = None
    if synthetic_doc is not None:
        synthetic = _parse_synthetic(synthetic_doc, "config.workload.synthetic")
        num_layers, num_experts = synthetic.num_layers, synthetic.num_experts
        trace = None
    else:
        if not isinstance(trace_path, str):
            raise ConfigError("config.workload.trace: expected a path string")
        trace = Path(trace_path)
        if not trace.is_absolute():
            trace = base_dir / trace
        if not trace.exists():
            raise ConfigError(f"config.workload.trace: {trace} does not exist")
        header = read_header(trace)
        num_layers, num_experts = header.num_layers, header.num_experts

    k = doc.get("k", preset.k if preset else None)
    if k is None:
        raise ConfigError("config.k: required (or supply a preset)")
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ConfigError(f"config.k: expected an integer >= 1, got {k!r}")
    if k > num_experts:
        raise ConfigError(f"config.k: k={k} exceeds num_experts={num_experts}")
    if preset and preset.num_experts != num_experts:
        raise ConfigError(
            f"preset {preset.name!r} is for {preset.num_experts} experts, "
            f"workload has {num_experts}")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"config.seed: expected an integer, got {seed!r}")

    if "policy" in doc and "policies" in doc:
        raise ConfigError("config: give either 'policy' or 'policies', not both")
    raw_policies = doc.get("policies", doc.get("policy"))
    if raw_policies is None:
        raw_policies = list(POLICY_NAMES)
    if isinstance(raw_policies, str):
        raw_policies = [raw_policies]
    if not isinstance(raw_policies, list) or not raw_policies:
        raise ConfigError("config.policies: expected a policy name or list")
    policies = []
    for p in raw_policies:
        if p not in POLICY_NAMES:
            raise ConfigError(
                f"config.policies: unknown policy {p!r}; "
                f"choose from {list(POLICY_NAMES)}")
        if p not in policies:
            policies.append(p)

    laser_bands = None
    if "laser" in doc:
        laser_bands = _parse_laser(doc["laser"], "config.laser", k,
                                   num_layers, num_experts, seed)
    elif preset is not None:
        laser_bands = band_params_from_preset(preset, num_layers, rng_seed=seed)
    if "laser" in policies and laser_bands is None:
        raise ConfigError(
            "config.laser: required when the laser policy is enabled "
            "(or supply a preset)")

    sweep_c = None
    if "sweep_c" in doc:
        raw = doc["sweep_c"]
        if not isinstance(raw, list) or not raw or not all(
                isinstance(x, int) and not isinstance(x, bool) for x in raw):
            raise ConfigError("config.sweep_c: expected a list of integers")
        sweep_c = tuple(raw)

    weights_src = doc.get("weights", "uniform")
    if weights_src == "uniform":
        weights = np.full(num_layers, 1.0 / num_layers)
        weights_doc = "uniform"
    elif isinstance(weights_src, dict):
        _check_keys(weights_src, {"flops", "flops_values"}, "config.weights")
        if "flops_values" in weights_src:
            values = weights_src["flops_values"]
        else:
            p = Path(weights_src["flops"])
            if not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"config.weights.flops: {p} does not exist")
            values = _load_column_file(p)
        if len(values) != num_layers:
            raise ConfigError(
                f"config.weights: {len(values)} FLOP values for "
                f"{num_layers} layers")
        try:
            weights = normalize_weights(values)
        except Exception as exc:
            raise ConfigError(f"config.weights: {exc}") from None
        weights_doc = {"flops_values": [float(v) for v in values]}
    else:
        raise ConfigError(
            f"config.weights: expected 'uniform' or a flops mapping, "
            f"got {weights_src!r}")

    placement = None
    placement_doc = None
    if "placement" in doc and doc["placement"] is not None:
        placement_src = doc["placement"]
        if isinstance(placement_src, str):
            p = Path(placement_src)
            if not p.is_absolute():
                p = base_dir / p
            if not p.exists():
                raise ConfigError(f"config.placement: {p} does not exist")
            rows = _load_matrix_file(p)
        elif isinstance(placement_src, dict):
            _check_keys(placement_src, {"values"}, "config.placement")
            rows = placement_src["values"]
        else:
            raise ConfigError("config.placement: expected a path or values mapping")
        try:
            placement = validate_placement(rows, num_experts=num_experts)
        except ConfigError as exc:
            raise ConfigError(f"config.placement: {exc}") from None
        placement_doc = {"values": [[float(x) for x in row] for row in placement]}

    perf = None
    perf_doc = None
    if "perf" in doc and doc["perf"] is not None:
        pm = _require_mapping(doc["perf"], "config.perf")
        _check_keys(pm, {"gamma", "t_comm", "t_offload", "gpu_price",
                         "gpu_count"}, "config.perf")
        try:
            perf = PerfParams(
                gamma=_get_number(pm, "gamma", "config.perf", 1.0),
                t_comm=_get_number(pm, "t_comm", "config.perf", 0.0),
                t_offload=_get_number(pm, "t_offload", "config.perf", 0.0),
                gpu_price=_get_number(pm, "gpu_price", "config.perf", 0.0),
                gpu_count=int(pm.get("gpu_count", 1)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.perf: {exc}") from None
        perf_doc = {"gamma": perf.gamma, "t_comm": perf.t_comm,
                    "t_offload": perf.t_offload, "gpu_price": perf.gpu_price,
                    "gpu_count": perf.gpu_count}

    load_reset = doc.get("load_reset", "batch")
    if load_reset not in LOAD_RESET_MODES:
        raise ConfigError(
            f"config.load_reset: expected one of {LOAD_RESET_MODES}, "
            f"got {load_reset!r}")

    out_dir = doc.get("out_dir") or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR
    if not isinstance(out_dir, str):
        raise ConfigError(f"config.out_dir: expected a path string, got {out_dir!r}")

    effective: dict[str, Any] = {
        "k": k,
        "seed": seed,
        "policies": policies,
        "workload": ({"synthetic": _synthetic_to_doc(synthetic)}
                     if synthetic else {"trace": str(doc["workload"]["trace"])}),
        "weights": weights_doc,
        "load_reset": load_reset,
        "out_dir": out_dir,
    }
    if laser_bands is not None:
        effective["laser"] = _laser_to_doc(laser_bands)
    if sweep_c is not None:
        effective["sweep_c"] = list(sweep_c)
    if placement_doc is not None:
        effective["placement"] = placement_doc
    if perf_doc is not None:
        effective["perf"] = perf_doc

    return ExperimentConfig(
        k=k, num_layers=num_layers, num_experts=num_experts,
        policies=tuple(policies), trace_path=trace, synthetic=synthetic,
        laser_bands=laser_bands, sweep_c=sweep_c, weights=weights,
        placement=placement, perf=perf, load_reset=load_reset, seed=seed,
        out_dir=Path(out_dir), effective=effective)


def dump_effective_config(cfg: ExperimentConfig, path: Path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.effective, fh, sort_keys=False)


def default_bands_doc(num_layers: int) -> list[tuple[int, int]]:
    """Thirds split used when a preset or --suggest needs band ranges."""
    return thirds_bands(num_layers)
