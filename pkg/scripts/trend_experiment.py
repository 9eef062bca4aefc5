#!/usr/bin/env python3
"""Mixed-profile workload comparison: skewed early/final layers, flat middle.

Runs vanilla top-k, load-only, and the load-aware router over one shared
synthetic workload and prints the per-policy imbalance summary, plus the
reduction ratios of the load-aware router against vanilla (both the raw
I_agg ratio and the excess-imbalance ratio, which is the informative one
at this scale).

Usage:
  python scripts/trend_experiment.py [--batches 100] [--tokens 512] [--c 4]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from moelab.config import resolve_config
from moelab.harness import run_experiment
from moelab.presets import band_params_from_preset, get_preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batches", type=int, default=100)
    ap.add_argument("--tokens", type=int, default=512)
    ap.add_argument("--layers", type=int, default=6)
    ap.add_argument("--c", type=int, default=4)
    ap.add_argument("--p-head", type=float, default=0.8)
    ap.add_argument("--preset", default="mixtral-gsm8k")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out-dir", default=None,
                    help="write full artifacts (default: summaries only)")
    args = ap.parse_args()

    preset = get_preset(args.preset)
    bands = band_params_from_preset(preset, args.layers, c=args.c)
    edge = args.layers // 3
    cfg = resolve_config({
        "k": preset.k,
        "seed": args.seed,
        "policies": ["vanilla", "load_only", "laser"],
        "out_dir": args.out_dir or "moelab-out",
        "workload": {"synthetic": {
            "num_layers": args.layers, "num_experts": preset.num_experts,
            "tokens_per_batch": args.tokens, "num_batches": args.batches,
            "seed": args.seed,
            "bands": [
                {"layers": [0, edge - 1], "profile": "spiked",
                 "p_head": args.p_head},
                {"layers": [edge, args.layers - edge - 1],
                 "profile": "dirichlet", "alpha": 1.0},
                {"layers": [args.layers - edge, args.layers - 1],
                 "profile": "spiked", "p_head": args.p_head},
            ]}},
        "laser": {"c": args.c, "bands": [
            {"layers": [b.lo, b.hi], "eps_high": b.params.eps_high,
             "t_fix": b.params.t_fix, "c": args.c} for b in bands.bands]},
    })

    doc, _ = run_experiment(cfg, write=args.out_dir is not None)
    print(f"{'policy':<12} {'p50_Iagg':>10} {'p95_Iagg':>10} {'mean_Iagg':>10}")
    for name, s in doc["policies"].items():
        print(f"{name:<12} {s['p50_iagg']:>10.4f} {s['p95_iagg']:>10.4f} "
              f"{s['mean_iagg']:>10.4f}")

    van, las = doc["policies"]["vanilla"], doc["policies"]["laser"]
    print(f"\nvanilla/laser mean I_agg ratio: "
          f"{van['mean_iagg'] / las['mean_iagg']:.3f}")
    print(f"vanilla/laser excess-imbalance (I_agg - 1) ratio: "
          f"mean {(van['mean_iagg'] - 1) / (las['mean_iagg'] - 1):.3f}, "
          f"p95 {(van['p95_iagg'] - 1) / (las['p95_iagg'] - 1):.3f}")
    if args.out_dir:
        print(f"\nartifacts in {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
