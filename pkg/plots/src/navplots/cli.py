"""navmem-plots <kind> --in ... --out ...: batch figure rendering."""

from __future__ import annotations

import argparse
import sys

from .io import SchemaError
from .render import plot_disthist, plot_ltm, plot_sweep, plot_trajectory


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="navmem-plots",
        description="Render figures from navmem run artifacts (read-only).",
    )
    sub = parser.add_subparsers(dest="kind", required=True)

    s = sub.add_parser("sweep", help="metric vs forgetting fraction")
    s.add_argument("--in", dest="inp", required=True, help="sweep CSV")
    s.add_argument("--out", required=True, help="output image (png/svg)")
    s.add_argument("--metric", default="pr", choices=["sr", "spl", "pr", "ppl"])

    d = sub.add_parser("disthist", help="distance-metric histograms per goal")
    d.add_argument("--in", dest="inp", required=True, help="distance CSV")
    d.add_argument("--out", required=True)
    d.add_argument("--bin-width", type=float, default=0.5)
    d.add_argument("--max-distance", type=float, default=8.0)

    l = sub.add_parser("ltm", help="LTM variation curves")
    l.add_argument("--in", dest="inp", required=True, help="LTM-delta CSV")
    l.add_argument("--out", required=True)

    t = sub.add_parser("trajectory", help="top-down trajectory render")
    t.add_argument("--world", required=True, help="MGWORLD1 world file")
    t.add_argument("--in", dest="inp", required=True, help="trajectory JSONL")
    t.add_argument("--out", required=True)
    t.add_argument("--dataset", help="episode dataset (adds goal markers)")
    t.add_argument("--snapshots", help="snapshot JSONL (adds node markers)")
    t.add_argument("--episode", type=int, help="episode id (default: first in file)")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "sweep":
            plot_sweep(args.inp, args.out, metric=args.metric)
        elif args.kind == "disthist":
            plot_disthist(args.inp, args.out, bin_width=args.bin_width,
                          value_range=(0.0, args.max_distance))
        elif args.kind == "ltm":
            plot_ltm(args.inp, args.out)
        elif args.kind == "trajectory":
            plot_trajectory(args.world, args.inp, args.out,
                            dataset_path=args.dataset,
                            snapshots_path=args.snapshots,
                            episode=args.episode)
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 3
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
