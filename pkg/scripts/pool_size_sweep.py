#!/usr/bin/env python3
"""Candidate-pool-size sweep on a flat workload.

Replays one Dirichlet(alpha) workload for every working-set cap c and prints
the paired P50/P95/mean I_agg series next to the vanilla and load-only
references. With expansion forced on (eps_high = 1) the series is monotone
down to the load-only floor at c = n.

Usage:
  python scripts/pool_size_sweep.py [--alpha 1.0] [--experts 8] [--k 2]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from moelab.config import resolve_config
from moelab.harness import run_sweep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--experts", type=int, default=8)
    ap.add_argument("--k", type=int, default=2)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--tokens", type=int, default=256)
    ap.add_argument("--batches", type=int, default=50)
    ap.add_argument("--alpha", type=float, default=1.0)
    ap.add_argument("--eps-high", type=float, default=1.0,
                    help="1.0 forces expansion for every token")
    ap.add_argument("--t-fix", type=float, default=1e-9)
    ap.add_argument("--c-list", default=None,
                    help="comma-separated; default k..n")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    cfg = resolve_config({
        "k": args.k, "seed": args.seed, "policies": ["laser"],
        "out_dir": "moelab-out",
        "workload": {"synthetic": {
            "num_layers": args.layers, "num_experts": args.experts,
            "tokens_per_batch": args.tokens, "num_batches": args.batches,
            "seed": args.seed,
            "bands": [{"layers": [0, args.layers - 1],
                       "profile": "dirichlet", "alpha": args.alpha}]}},
        "laser": {"eps_high": args.eps_high, "t_fix": args.t_fix, "c": args.k},
    })
    if args.c_list:
        c_list = [int(x) for x in args.c_list.split(",")]
    else:
        c_list = list(range(args.k, args.experts + 1))

    summary, sweep = run_sweep(cfg, c_list, write=False)
    print(f"{'config':<12} {'p50_Iagg':>10} {'p95_Iagg':>10} {'mean_Iagg':>10}")
    for name in ("vanilla", "load_only"):
        s = summary["policies"][name]
        print(f"{name:<12} {s['p50_iagg']:>10.4f} {s['p95_iagg']:>10.4f} "
              f"{s['mean_iagg']:>10.4f}")
    for entry in summary["sweep"]:
        label = f"laser c={entry['c']}"
        print(f"{label:<12} {entry['p50_iagg']:>10.4f} "
              f"{entry['p95_iagg']:>10.4f} {entry['mean_iagg']:>10.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
