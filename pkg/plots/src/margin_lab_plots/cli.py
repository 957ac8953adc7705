"""CLI: margin-lab-plot <kind> --in a.csv [b.csv ...] --out figure.png"""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_KINDS, FigureSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="margin-lab-plot",
        description="render figures from margin-lab experiment CSVs")
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input CSV path(s)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--label", dest="labels", action="append", default=[],
                        help="series label (repeatable, one per input)")
    parser.add_argument("--column", default="frob_margin",
                        help="margin column for hist/cdf kinds")
    parser.add_argument("--filter", dest="margin_filter",
                        choices=("all", "correct", "clean", "clean-correct"),
                        default="clean-correct")
    parser.add_argument("--title", default="")
    parser.add_argument("--x-label", default="")
    parser.add_argument("--y-label", default="")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    spec = FigureSpec(kind=args.kind, inputs=tuple(args.inputs),
                      output=args.out, labels=tuple(args.labels),
                      column=args.column, margin_filter=args.margin_filter,
                      title=args.title, x_label=args.x_label,
                      y_label=args.y_label)
    try:
        out = render(spec)
    except (FileNotFoundError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
