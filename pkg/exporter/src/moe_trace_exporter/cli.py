"""Command-line exporter: record a model's gate scores to a trace file.

    moe-trace-export --model toy-2x4 --prompts-file prompts.txt \\
        --out gates.trc --max-decode-tokens 8
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .session import ExportError, ExportSession, attach_hooks, export_run
from .toy_model import MODEL_REGISTRY, build_model


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="moe-trace-export",
        description="Export per-token gate scores from an MoE model to the "
                    "moelab binary trace format")
    ap.add_argument("--model", required=True,
                    help=f"model identifier ({', '.join(sorted(MODEL_REGISTRY))})")
    ap.add_argument("--prompts-file", required=True,
                    help="text file, one prompt per line")
    ap.add_argument("--out", required=True, help="output trace path")
    ap.add_argument("--max-prefill-tokens", type=int, default=None)
    ap.add_argument("--max-decode-tokens", type=int, default=4)
    args = ap.parse_args(argv)

    try:
        model = build_model(args.model)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        prompts = [line.rstrip("\n") for line in
                   Path(args.prompts_file).read_text().splitlines()]
        prompts = [p for p in prompts if p]
        session = ExportSession.for_model(
            model, args.model, args.out,
            max_prefill_tokens=args.max_prefill_tokens,
            max_decode_tokens=args.max_decode_tokens)
        attach_hooks(session)
        stats = export_run(session, prompts)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(stats.summary_line())
    return 0


if __name__ == "__main__":
    sys.exit(main())
