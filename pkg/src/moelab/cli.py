"""Command-line entry point.

Subcommands:

    run      execute the experiment described by a config file
    sweep    paired candidate-pool sweep over a list of c values
    analyze  per-layer gate statistics of a trace (+ parameter suggestion)
    gen      write a synthetic workload to a trace file

Exit codes: 0 success, 2 configuration/schema errors (diagnostics name the
offending field), 1 runtime errors.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import (DEFAULT_OUT_DIR, OUT_DIR_ENV, apply_overrides,
                     load_config_file, parse_weights_flag, resolve_config)
from .errors import ConfigError, MoeLabError
from .gating import (DEFAULT_TAU_DOM, DEFAULT_TAU_PLATEAU,
                     aggregate_layer_stats, suggest_parameters,
                     validate_scores)
from .harness import run_experiment, run_sweep
from .presets import thirds_bands
from .synthetic import generate_synthetic
from .tracefile import Phase, read_header, replay_trace, write_trace


def _add_run_overrides(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="experiment config (YAML)")
    p.add_argument("--out-dir", help=f"output directory (default: config, "
                                     f"then ${OUT_DIR_ENV}, then {DEFAULT_OUT_DIR})")
    p.add_argument("--seed", type=int, help="override the routing seed")
    p.add_argument("--preset", help="parameter preset name")
    p.add_argument("--policy", help="comma-separated policies to run "
                                    "(vanilla,load_only,laser)")
    p.add_argument("--weights", help="'uniform' or 'flops:<path>'")
    p.add_argument("--placement", help="path to a GxN placement matrix")
    p.add_argument("--load-reset", choices=("batch", "cumulative"),
                   help="load counter reset mode")


def _collect_overrides(args) -> dict:
    overrides = {
        "out_dir": args.out_dir,
        "seed": args.seed,
        "preset": args.preset,
        "load_reset": args.load_reset,
        "placement": args.placement,
    }
    if args.policy:
        overrides["policies"] = [p.strip() for p in args.policy.split(",") if p.strip()]
    if args.weights:
        overrides["weights"] = parse_weights_flag(args.weights)
    return overrides


def _print_policy_table(doc: dict):
    rows = [(name, s["p50_iagg"], s["p95_iagg"], s["mean_iagg"])
            for name, s in doc["policies"].items()]
    print(f"{'policy':<12} {'p50_Iagg':>10} {'p95_Iagg':>10} {'mean_Iagg':>10}")
    for name, p50, p95, mean in rows:
        print(f"{name:<12} {p50:>10.4f} {p95:>10.4f} {mean:>10.4f}")


def cmd_run(args) -> int:
    doc = load_config_file(args.config)
    doc = apply_overrides(doc, _collect_overrides(args))
    cfg = resolve_config(doc, base_dir=Path(args.config).resolve().parent)
    summary, _ = run_experiment(cfg)
    _print_policy_table(summary)
    print(f"artifacts written to {cfg.out_dir}")
    return 0


def cmd_sweep(args) -> int:
    doc = load_config_file(args.config)
    doc = apply_overrides(doc, _collect_overrides(args))
    cfg = resolve_config(doc, base_dir=Path(args.config).resolve().parent)
    if args.c_list:
        c_list = [int(x) for x in args.c_list.split(",") if x.strip()]
    elif cfg.sweep_c:
        c_list = list(cfg.sweep_c)
    else:
        raise ConfigError("sweep requires --c-list or config.sweep_c")
    summary, sweep = run_sweep(cfg, c_list)
    _print_policy_table(summary)
    print(f"{'c':<12} {'p50_Iagg':>10} {'p95_Iagg':>10} {'mean_Iagg':>10}")
    for entry in summary["sweep"]:
        print(f"{entry['c']:<12} {entry['p50_iagg']:>10.4f} "
              f"{entry['p95_iagg']:>10.4f} {entry['mean_iagg']:>10.4f}")
    print(f"artifacts written to {cfg.out_dir}")
    return 0


def _parse_band_ranges(text: str) -> list[tuple[int, int]]:
    ranges = []
    for part in text.split(","):
        part = part.strip()
        try:
            lo, hi = part.split("-", 1)
            ranges.append((int(lo), int(hi)))
        except ValueError:
            raise ConfigError(
                f"--bands expects 'lo-hi,lo-hi,...', got {part!r}") from None
    return ranges


def cmd_analyze(args) -> int:
    phase_filter = None
    if args.phase != "all":
        phase_filter = Phase.from_label(args.phase)
    header = read_header(args.trace)

    def stream():
        for rec in replay_trace(args.trace):
            if phase_filter is not None and rec.phase != phase_filter:
                continue
            yield rec.layer, validate_scores(rec.scores)

    stats = aggregate_layer_stats(stream(), args.k, args.tau_dom,
                                  args.tau_plateau)
    if not stats:
        print("trace contains no matching tokens", file=sys.stderr)
        return 1
    if args.normalized_entropy and header.num_experts > 1:
        # Nearest-rank percentiles commute with the monotone H -> H/ln(n).
        scale = 1.0 / math.log(header.num_experts)
        stats = [replace(st, entropy_p25=st.entropy_p25 * scale,
                         entropy_p50=st.entropy_p50 * scale,
                         entropy_p75=st.entropy_p75 * scale)
                 for st in stats]

    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "layerstats.csv"
    with open(out_path, "w") as fh:
        fh.write(stats[0].CSV_HEADER + "\n")
        for st in stats:
            fh.write(st.csv_row() + "\n")

    print(f"{'layer':<6} {'mean_Mk':>8} {'H_p50':>8} "
          f"{'single':>7} {'plateau':>8} {'smooth':>7} {'tokens':>8}")
    for st in stats:
        f = st.regime_fractions
        print(f"{st.layer_index:<6} {st.mean_Mk:>8.4f} {st.entropy_p50:>8.4f} "
              f"{f[0]:>7.3f} {f[1]:>8.3f} {f[2]:>7.3f} {st.token_count:>8}")
    print(f"layer statistics written to {out_path}")

    if args.suggest:
        num_layers = max(st.layer_index for st in stats) + 1
        if args.bands:
            ranges = _parse_band_ranges(args.bands)
        else:
            ranges = thirds_bands(num_layers)
        c = args.c if args.c is not None else min(args.k + 2, header.num_experts)
        bands = suggest_parameters(
            stats, ranges, args.target_expansion_rate, k=args.k, c=c)
        print("suggested band parameters "
              f"(target expansion rate {args.target_expansion_rate}):")
        for band in bands.bands:
            p = band.params
            print(f"  layers [{band.lo}..{band.hi}]: eps_high={p.eps_high:.4f} "
                  f"t_fix={p.t_fix} c={p.c}")
    return 0


def cmd_gen(args) -> int:
    doc = load_config_file(args.config)
    if args.seed is not None:
        workload = doc.get("workload")
        if isinstance(workload, dict) and isinstance(workload.get("synthetic"), dict):
            workload["synthetic"]["seed"] = args.seed
    cfg = resolve_config(doc, base_dir=Path(args.config).resolve().parent)
    if cfg.synthetic is None:
        raise ConfigError("gen requires a synthetic workload in the config")
    count = write_trace(args.out, cfg.synthetic.num_experts,
                        cfg.synthetic.num_layers,
                        generate_synthetic(cfg.synthetic))
    print(f"wrote {count} records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moelab",
        description="Routing laboratory for Mixture-of-Experts inference")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    _add_run_overrides(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="candidate-pool sweep over c values")
    _add_run_overrides(p_sweep)
    p_sweep.add_argument("--c-list", help="comma-separated c values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_an = sub.add_parser("analyze", help="per-layer gate statistics of a trace")
    p_an.add_argument("--trace", required=True, help="trace file path")
    p_an.add_argument("--k", type=int, required=True,
                      help="k for the top-k mass statistic")
    p_an.add_argument("--out-dir", help="where to write layerstats.csv")
    p_an.add_argument("--phase", choices=("all", "prefill", "decode"),
                      default="all", help="restrict to one phase")
    p_an.add_argument("--tau-dom", type=float, default=DEFAULT_TAU_DOM,
                      help="single-head dominance threshold")
    p_an.add_argument("--tau-plateau", type=float, default=DEFAULT_TAU_PLATEAU,
                      help="plateau ratio threshold")
    p_an.add_argument("--normalized-entropy", action="store_true",
                      help="report entropy percentiles as H / ln(n)")
    p_an.add_argument("--suggest", action="store_true",
                      help="print suggested per-band router parameters")
    p_an.add_argument("--target-expansion-rate", type=float, default=0.25,
                      help="calibration target for --suggest")
    p_an.add_argument("--bands", help="band ranges for --suggest, e.g. 0-9,10-20,21-31")
    p_an.add_argument("--c", type=int, help="working-set cap for --suggest output")
    p_an.set_defaults(func=cmd_analyze)

    p_gen = sub.add_parser("gen", help="write a synthetic workload to a trace file")
    p_gen.add_argument("--config", required=True,
                       help="config with a synthetic workload section")
    p_gen.add_argument("--out", required=True, help="output trace path")
    p_gen.add_argument("--seed", type=int, help="override the workload seed")
    p_gen.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MoeLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
