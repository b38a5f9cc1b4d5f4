"""Command-line entry points: ``simulate`` runs a battery, ``aggregate``
folds its artifacts, ``audit`` re-examines one persisted run."""

from __future__ import annotations

import argparse
import collections
import dataclasses
import json
import sys

from .domain import MODE_COMPETITIVE, MODE_STRATEGIC
from .runner import (
    ConfigError,
    aggregate_and_write,
    audit_run_from_meta,
    load_config,
    resolve_out_dir,
    run_experiment,
)


def _simulate_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simulate", description="Run an experiment battery.")
    p.add_argument("--config", required=True, help="JSON experiment configuration")
    p.add_argument("--preset", choices=["table1", "convergence"], default=None)
    p.add_argument("--mode", choices=["strategic", "competitive", "both"], default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default=None, help="output directory (or $SIM_OUT_DIR)")
    return p


def simulate_main(argv=None) -> int:
    args = _simulate_parser().parse_args(argv)
    try:
        config = load_config(args.config, preset=args.preset)
        if args.mode:
            modes = (
                (MODE_STRATEGIC, MODE_COMPETITIVE)
                if args.mode == "both"
                else (args.mode,)
            )
            config = dataclasses.replace(config, modes=modes)
        out = resolve_out_dir(args.out, config)
        manifest = run_experiment(config, out, jobs=max(1, args.jobs))
    except (ConfigError, OSError) as exc:
        print(f"simulate: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {manifest['n_runs']} runs under {out} (manifest.json)")
    return 0


def aggregate_main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="aggregate", description="Aggregate a battery's artifacts.")
    p.add_argument("--manifest", required=True, help="path to manifest.json")
    p.add_argument("--out", default=None, help="aggregate output directory")
    args = p.parse_args(argv)
    try:
        agg_dir = aggregate_and_write(args.manifest, args.out)
    except (ConfigError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"aggregate: error: {exc}", file=sys.stderr)
        return 2
    print(f"aggregates written to {agg_dir}")
    return 0


def audit_main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="audit", description="Best-response audit of one persisted run."
    )
    p.add_argument("--run", required=True, help="path to a run's meta.json")
    p.add_argument("--tail", type=int, default=None, help="audit window (periods)")
    args = p.parse_args(argv)
    try:
        meta, conv, log = audit_run_from_meta(args.run, tail=args.tail)
    except (ConfigError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"audit: error: {exc}", file=sys.stderr)
        return 2
    cell = meta["cell"]
    print(
        f"run {cell['mode']} C={cell['info_cost']} #{cell['run_index']} "
        f"(seed {meta['seed']}):"
    )
    print(f"  converged traders: {conv.converged_count}/{log.params.num_traders}")
    frac = conv.optimal_fraction
    print(f"  optimal among converged: {'n/a' if frac is None else f'{frac:.1%}'}")
    hist = collections.Counter(
        log.arms[conv.modal_arm[i]].label
        for i in range(log.params.num_traders)
        if conv.converged[i]
    )
    for label, n in sorted(hist.items(), key=lambda kv: -kv[1]):
        print(f"    {label}: {n}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: marketsim {simulate|aggregate|audit} [options]", file=sys.stderr)
        return 0 if argv else 2
    cmd, rest = argv[0], argv[1:]
    if cmd == "simulate":
        return simulate_main(rest)
    if cmd == "aggregate":
        return aggregate_main(rest)
    if cmd == "audit":
        return audit_main(rest)
    print(f"unknown command {cmd!r}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
