"""CLI: render figures from a battery's manifest and aggregates."""

from __future__ import annotations

import argparse
import sys

from .render import FIGURE_KINDS, MissingInputError, SchemaError, render_figures


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="render", description="Render figures from simulation artifacts."
    )
    p.add_argument("--manifest", required=True, help="path to manifest.json")
    p.add_argument(
        "--kinds",
        default=",".join(FIGURE_KINDS),
        help=f"comma-separated subset of: {', '.join(FIGURE_KINDS)}",
    )
    p.add_argument("--out", default="figures_out", help="output directory")
    p.add_argument("--format", choices=["png", "svg"], default="png")
    p.add_argument(
        "--costs",
        default=None,
        help="comma-separated cost filter (default: every cost in the battery)",
    )
    args = p.parse_args(argv)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    costs = (
        [float(c) for c in args.costs.split(",")] if args.costs is not None else None
    )
    try:
        written = render_figures(
            args.manifest, kinds, args.out, image_format=args.format, costs=costs
        )
    except (MissingInputError, SchemaError, OSError, ValueError) as exc:
        print(f"render: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(written)} figures to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
