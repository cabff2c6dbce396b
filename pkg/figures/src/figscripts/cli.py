"""Command-line entry point: ``render_figure --fig <id> --in <csv...> --out <png>``."""

from __future__ import annotations

import argparse
import sys

from .families import FAMILIES
from .schema import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render_figure",
        description="Render a figure family from cpqt experiment CSV files.",
    )
    parser.add_argument("--fig", required=True, choices=sorted(FAMILIES), help="figure family id")
    parser.add_argument(
        "--in", dest="inputs", required=True, nargs="+", metavar="CSV", help="input CSV files"
    )
    parser.add_argument("--out", required=True, help="output image path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        FAMILIES[args.fig](args.inputs, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
