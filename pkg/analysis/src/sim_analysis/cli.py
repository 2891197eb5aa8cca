"""Command line: aggregate sweep trees to CSV and render figures."""

from __future__ import annotations

import argparse
import sys

from .aggregate import AnalysisError, aggregate, write_csv
from .figures import FIGURE_KINDS, plot_figure


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sim-analysis",
        description="Post-process simulator sweep outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    agg = sub.add_parser("aggregate", help="tabulate per-point metric means")
    agg.add_argument("root", help="sweep output root directory")
    agg.add_argument("--csv", help="write the table to this CSV file")

    plot = sub.add_parser("plot", help="render one figure kind")
    plot.add_argument("kind", choices=FIGURE_KINDS)
    plot.add_argument("root", help="sweep output root directory")
    plot.add_argument("--out", required=True, help="image file to write")
    return parser


def cmd_aggregate(args) -> int:
    table = aggregate(args.root)
    if not table.rows:
        print("no data found", file=sys.stderr)
        return 1
    if args.csv:
        write_csv(table, args.csv)
        print(f"wrote {len(table.rows)} rows to {args.csv}")
    else:
        for row in table.rows:
            print(f"{row.point:30s} {row.metric:16s} mean={row.mean:.6g} "
                  f"stddev={row.stddev:.6g} n={row.test_count}")
    return 0


def cmd_plot(args) -> int:
    table = aggregate(args.root)
    path = plot_figure(args.kind, table, args.out)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"aggregate": cmd_aggregate, "plot": cmd_plot}[args.command](args)
    except AnalysisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
