"""Command-line figure rendering: `iterlearn-plots render ...`."""
from __future__ import annotations

import argparse
import sys

from .render import PANELS, PlotSpec, render


def build_parser():
    parser = argparse.ArgumentParser(prog="iterlearn-plots", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one panel from metrics CSVs")
    p.add_argument("--metrics", nargs="+", required=True, help="metrics CSV path(s)")
    p.add_argument("--panel", required=True, help=f"one of: {', '.join(PANELS)}")
    p.add_argument("--out", required=True, help="output image path")
    p.add_argument("--seed", help="seed for type_bars (default: first seed)")
    p.add_argument("--experiment", help="narrow multi-experiment inputs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = PlotSpec(
            metrics_paths=args.metrics,
            panel=args.panel,
            out_path=args.out,
            seed=args.seed,
            experiment=args.experiment,
        )
        render(spec)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(args.out, file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
