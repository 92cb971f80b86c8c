"""plots: render step-series figures from simulator CSV files."""

from __future__ import annotations

import argparse
import json
import sys

from .figures import KINDS, render
from .series import SchemaError, load_many


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Render per-step figures from steps.csv / comparison.csv files.",
    )
    sub = parser.add_subparsers(dest="kind", required=True, metavar=f"{{{','.join(KINDS)}}}")
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"plot {kind} per time step")
        p.add_argument("--csv", required=True, help="comma-separated CSV files")
        p.add_argument("--out", required=True, help="output image path")
        p.add_argument("--dump-data", help="also write the plotted arrays as JSON")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        series = load_many([p for p in args.csv.split(",") if p])
        payload = render(args.kind, series, args.out)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dump_data:
        with open(args.dump_data, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
