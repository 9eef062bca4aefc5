"""Experiment harness: drives routing policies over a workload batch by
batch and layer by layer, accumulates assignment counts, and emits decision
logs, imbalance reports, and summaries.

Within one (batch, layer) tokens are routed sequentially against the
evolving load vector; decisions are order-dependent by design. Distinct
(batch, layer) contexts are independent given the load-reset mode, and all
outputs are written in sorted (batch, layer, token) order, so results do not
depend on any execution interleaving.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .errors import ConfigError, InputError
from .gating import RENORM_TOLERANCE
from .imbalance import BatchSummary, batch_report, summarize_batches
from .perf import PerfEstimate, estimate_performance
from .routing import (RNG_ALGORITHM, BandParams, RoutingDecision,
                      route_laser, route_load_only, route_vanilla_topk)
from .synthetic import SyntheticSpec, generate_matrices
from .tracefile import read_trace


@dataclass
class Workload:
    """In-memory workload: per (batch, layer) a normalized score matrix.

    ``grids[batch][layer]`` is a float64 [tokens x n] matrix whose rows sum
    to 1; ``token_ids`` holds the matching token identifiers in row order.
    """

    num_layers: int
    num_experts: int
    batches: list[int]
    grids: dict[int, dict[int, np.ndarray]]
    token_ids: dict[int, dict[int, list[int]]]

    @property
    def mean_tokens_per_batch(self) -> float:
        totals = []
        for b in self.batches:
            counts = {len(ids) for ids in self.token_ids[b].values()}
            totals.append(max(counts) if counts else 0)
        return float(np.mean(totals)) if totals else 0.0


def _normalize_block(scores: np.ndarray, where: str) -> np.ndarray:
    block = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(block)):
        raise InputError(f"{where}: non-finite gate scores")
    if np.any(block < 0):
        raise InputError(f"{where}: negative gate scores")
    sums = block.sum(axis=1)
    bad = np.where((sums <= 0) | (np.abs(sums - 1.0) > RENORM_TOLERANCE))[0]
    if bad.size:
        i = int(bad[0])
        raise InputError(
            f"{where}, token row {i}: scores sum to {sums[i]:.6g}, outside "
            f"renormalization tolerance {RENORM_TOLERANCE:g}")
    return block / sums[:, None]


def workload_from_synthetic(spec: SyntheticSpec) -> Workload:
    grids: dict[int, dict[int, np.ndarray]] = {}
    token_ids: dict[int, dict[int, list[int]]] = {}
    for batch, layer, scores in generate_matrices(spec):
        grids.setdefault(batch, {})[layer] = _normalize_block(
            scores, f"synthetic batch {batch} layer {layer}")
        token_ids.setdefault(batch, {})[layer] = list(range(scores.shape[0]))
    return Workload(spec.num_layers, spec.num_experts,
                    sorted(grids), grids, token_ids)


def workload_from_trace(path) -> Workload:
    header, records = read_trace(path)
    buckets: dict[int, dict[int, list]] = {}
    for rec in records:
        buckets.setdefault(rec.batch, {}).setdefault(rec.layer, []).append(rec)
    grids: dict[int, dict[int, np.ndarray]] = {}
    token_ids: dict[int, dict[int, list[int]]] = {}
    for batch in sorted(buckets):
        grids[batch] = {}
        token_ids[batch] = {}
        for layer in sorted(buckets[batch]):
            recs = sorted(buckets[batch][layer], key=lambda r: r.token)
            block = np.stack([r.scores for r in recs])
            grids[batch][layer] = _normalize_block(
                block, f"{path} batch {batch} layer {layer}")
            token_ids[batch][layer] = [r.token for r in recs]
    return Workload(header.num_layers, header.num_experts,
                    sorted(grids), grids, token_ids)


def build_workload(cfg: ExperimentConfig) -> Workload:
    if cfg.synthetic is not None:
        return workload_from_synthetic(cfg.synthetic)
    w = workload_from_trace(cfg.trace_path)
    w.num_layers = cfg.num_layers
    return w


@dataclass
class PolicyResult:
    policy: str
    summary: BatchSummary
    iagg_per_batch: list[float]
    gpu_summary: BatchSummary | None
    gpu_iagg_per_batch: list[float]
    total_counts: np.ndarray          # [num_layers x n] across batches
    skipped_layers: int
    out_dir: Path | None = None
    perf: dict | None = field(default=None)


def _fmt(x: float) -> str:
    return repr(float(x))


def run_policy(
    workload: Workload,
    policy: str,
    cfg: ExperimentConfig,
    bands: BandParams | None = None,
    out_dir: Path | None = None,
) -> PolicyResult:
    """Route the whole workload under one policy, writing artifacts.

    Artifacts (when ``out_dir`` is given): decisions.csv, counts_{batch}.csv,
    imbalance.csv, heatmap.csv. Returns per-batch aggregated imbalance and
    its summary; GPU-level variants when a placement matrix is configured.
    """
    if policy == "laser":
        if bands is None:
            bands = cfg.laser_bands
        if bands is None:
            raise ConfigError("laser policy requires band parameters")
    k = cfg.k
    n = workload.num_experts
    rng = np.random.default_rng(cfg.seed)
    dec_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        dec_fh = open(out_dir / "decisions.csv", "w")
        dec_fh.write("batch,layer,token,path,m,c_star,selected\n")

    per_layer_params = None
    if policy == "laser":
        per_layer_params = [bands.resolve(layer)
                            for layer in range(workload.num_layers)]

    iaggs: list[float] = []
    gpu_iaggs: list[float] = []
    skipped = 0
    total_counts = np.zeros((workload.num_layers, n), dtype=np.int64)
    imb_rows: list[str] = []
    cumulative: dict[int, list[int]] = {}

    for batch in workload.batches:
        counts = np.zeros((workload.num_layers, n), dtype=np.int64)
        seen_layers = sorted(workload.grids[batch])
        for layer in seen_layers:
            grid = workload.grids[batch][layer]
            tokens = workload.token_ids[batch][layer]
            if cfg.load_reset == "cumulative":
                loads = cumulative.setdefault(layer, [0] * n)
            else:
                loads = [0] * n
            rows = grid.tolist()
            layer_counts = counts[layer]
            if policy == "laser":
                params = per_layer_params[layer]
            for row, token in zip(rows, tokens):
                if policy == "vanilla":
                    d = route_vanilla_topk(row, k)
                elif policy == "load_only":
                    d = route_load_only(loads, k)
                else:
                    d = route_laser(row, loads, params, rng)
                for e in d.selected:
                    loads[e] += 1
                    layer_counts[e] += 1
                if dec_fh is not None:
                    dec_fh.write(
                        f"{batch},{layer},{token},{d.path.value},{d.pool_size},"
                        f"{d.working_set_size},"
                        f"{';'.join(map(str, d.selected))}\n")
        total_counts += counts

        try:
            report = batch_report(counts, cfg.weights, cfg.placement)
        except InputError:
            skipped += workload.num_layers  # whole batch empty
            continue
        skipped += report.skipped_layers
        iaggs.append(report.i_agg)
        if report.gpu_i_agg is not None:
            gpu_iaggs.append(report.gpu_i_agg)

        for layer in range(workload.num_layers):
            i_l = report.per_layer_i[layer]
            if i_l is None:
                continue
            if report.gpu_per_layer_i is not None:
                gi = report.gpu_per_layer_i[layer]
                gpu_cols = f",{_fmt(gi)},{_fmt(gi - 1.0)}"
            else:
                gpu_cols = ",,"
            imb_rows.append(
                f"{batch},{layer},{_fmt(i_l)},{_fmt(i_l - 1.0)}{gpu_cols}")

        if out_dir is not None:
            with open(out_dir / f"counts_{batch}.csv", "w") as fh:
                fh.write("layer," + ",".join(
                    f"expert_{e}" for e in range(n)) + "\n")
                for layer in range(workload.num_layers):
                    fh.write(f"{layer}," +
                             ",".join(map(str, counts[layer])) + "\n")

    if dec_fh is not None:
        dec_fh.close()
        with open(out_dir / "imbalance.csv", "w") as fh:
            fh.write("batch,layer,I,MV,gpu_I,gpu_MV\n")
            fh.write("\n".join(imb_rows) + ("\n" if imb_rows else ""))
        with open(out_dir / "heatmap.csv", "w") as fh:
            fh.write("layer," + ",".join(
                f"expert_{e}" for e in range(n)) + "\n")
            for layer in range(workload.num_layers):
                fh.write(f"{layer}," +
                         ",".join(map(str, total_counts[layer])) + "\n")

    if not iaggs:
        raise InputError(f"policy {policy}: no batch produced any load")
    return PolicyResult(
        policy=policy,
        summary=summarize_batches(iaggs),
        iagg_per_batch=iaggs,
        gpu_summary=summarize_batches(gpu_iaggs) if gpu_iaggs else None,
        gpu_iagg_per_batch=gpu_iaggs,
        total_counts=total_counts,
        skipped_layers=skipped,
        out_dir=out_dir,
    )


def _summary_dict(s: BatchSummary) -> dict:
    return {"p50_iagg": s.p50_iagg, "p95_iagg": s.p95_iagg,
            "mean_iagg": s.mean_iagg, "batch_count": s.batch_count}


def _attach_perf(results: list[PolicyResult], cfg: ExperimentConfig,
                 tokens_per_step: float):
    """Fill in step-time / throughput / cost estimates per policy.

    Uses GPU-level aggregated imbalance when a placement is configured,
    otherwise expert-level (identity placement). The first policy in the
    run is the throughput baseline. Cost divides the step cost across the
    tokens of one decoding step.
    """
    if cfg.perf is None or not results:
        return

    def agg(r: PolicyResult) -> float:
        s = r.gpu_summary if r.gpu_summary is not None else r.summary
        return s.mean_iagg

    base = agg(results[0])
    for r in results:
        r.perf = estimate_performance(agg(r), base, cfg.perf,
                                      tokens_per_step).as_dict()


def make_summary(cfg: ExperimentConfig, results: list[PolicyResult],
                 sweep: list[tuple[int, PolicyResult]] | None = None) -> dict:
    doc = {
        "rng_algorithm": RNG_ALGORITHM,
        "policies": {},
        "effective_config": cfg.effective,
    }
    for r in results:
        entry = _summary_dict(r.summary)
        entry["skipped_layers"] = r.skipped_layers
        entry["gpu"] = _summary_dict(r.gpu_summary) if r.gpu_summary else None
        entry["perf"] = r.perf
        doc["policies"][r.policy] = entry
    if sweep is not None:
        doc["sweep"] = [
            {"c": c, **_summary_dict(r.summary),
             "gpu": _summary_dict(r.gpu_summary) if r.gpu_summary else None}
            for c, r in sweep]
    return doc


def write_summary(doc: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, workload: Workload | None = None,
                   write: bool = True) -> tuple[dict, list[PolicyResult]]:
    """Run every configured policy over one workload (paired comparison)."""
    if workload is None:
        workload = build_workload(cfg)
    results = []
    for policy in cfg.policies:
        sub = cfg.out_dir / policy if write else None
        results.append(run_policy(workload, policy, cfg, out_dir=sub))
    _attach_perf(results, cfg, workload.mean_tokens_per_batch)
    doc = make_summary(cfg, results)
    if write:
        write_summary(doc, cfg.out_dir)
        from .config import dump_effective_config
        dump_effective_config(cfg, cfg.out_dir / "effective_config.yaml")
    return doc, results


def run_sweep(cfg: ExperimentConfig, c_list: list[int],
              workload: Workload | None = None, write: bool = True,
              warn=None) -> tuple[dict, list[tuple[int, PolicyResult]]]:
    """Paired candidate-pool sweep: one laser run per c over one workload.

    Duplicate c values are dropped with a warning. Vanilla and load-only
    references run once. Every run replays the identical token stream.
    """
    if warn is None:
        warn = lambda msg: print(f"warning: {msg}", file=sys.stderr)
    if cfg.laser_bands is None:
        raise ConfigError("sweep requires laser band parameters")
    seen = set()
    cs = []
    for c in c_list:
        if c in seen:
            warn(f"duplicate sweep value c={c} ignored")
            continue
        if not cfg.k <= c <= cfg.num_experts:
            raise ConfigError(
                f"sweep c={c} outside [k={cfg.k}, n={cfg.num_experts}]")
        seen.add(c)
        cs.append(c)
    if workload is None:
        workload = build_workload(cfg)
    results = []
    for policy in ("vanilla", "load_only"):
        sub = cfg.out_dir / policy if write else None
        results.append(run_policy(workload, policy, cfg, out_dir=sub))
    sweep_results = []
    for c in cs:
        sub = cfg.out_dir / f"laser_c{c}" if write else None
        r = run_policy(workload, "laser", cfg, bands=cfg.laser_bands.with_c(c),
                       out_dir=sub)
        sweep_results.append((c, r))
    _attach_perf(results, cfg, workload.mean_tokens_per_batch)
    doc = make_summary(cfg, results, sweep=sweep_results)
    if write:
        write_summary(doc, cfg.out_dir)
        from .config import dump_effective_config
        dump_effective_config(cfg, cfg.out_dir / "effective_config.yaml")
    return doc, sweep_results
