"""Command-line front end for the sweep runners.

Subcommands: ``bounds``, ``estimate``, ``ser``, ``sweep`` (all three) and
``validate-config``.  Exit codes: 0 on success, 2 on configuration errors,
3 on numerical failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness import (ConfigError, Scenario, load_scenario, parse_mask,
                      run_bounds_sweep, run_estimator_sweep, run_ser_sweep,
                      scenario_from_dict, write_rows)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hwiloc",
        description="mmWave uplink localization under hardware impairments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
            ("bounds", "error-bound sweep (CRB / LB / ALB)"),
            ("estimate", "Monte-Carlo estimator sweep with matching bounds"),
            ("ser", "symbol-error-rate sweep"),
            ("sweep", "composite run of bounds, estimate and ser"),
            ("validate-config", "validate a scenario file and print it resolved")]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--scenario", type=Path, default=None,
                       help="scenario YAML file (defaults apply when omitted)")
        if name != "validate-config":
            p.add_argument("--seed", type=int, default=None,
                           help="master seed override")
            p.add_argument("--out", type=Path, default=Path("results"),
                           help="output directory")
            p.add_argument("--parallel", type=int, default=1,
                           help="worker processes")
            p.add_argument("--mask", type=str, default=None,
                           help="impairment mask, e.g. 'pn,cfo' or 'all' or 'none'")
            p.add_argument("--sync-mode", type=str, default=None,
                           choices=["bs-sync", "bs-async"])
    return parser


def _load(args) -> Scenario:
    if args.scenario is None:
        scenario = scenario_from_dict({})
    else:
        scenario = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        scenario = replace(scenario, master_seed=int(args.seed))
    if getattr(args, "mask", None) is not None:
        scenario = replace(scenario, mask=parse_mask(args.mask))
    if getattr(args, "sync_mode", None) is not None:
        scenario = replace(scenario, sync_mode=args.sync_mode)
    return scenario


_RUNNERS = {
    "bounds": [("bounds", run_bounds_sweep)],
    "estimate": [("estimate", run_estimator_sweep)],
    "ser": [("ser", run_ser_sweep)],
    "sweep": [("bounds", run_bounds_sweep), ("estimate", run_estimator_sweep),
              ("ser", run_ser_sweep)],
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = _load(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate-config":
        print(json.dumps(scenario.raw, indent=2, sort_keys=True))
        return EXIT_OK

    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        for tag, runner in _RUNNERS[args.command]:
            rows = runner(scenario, n_workers=args.parallel)
            path = out_dir / f"{scenario.scenario_id}_{tag}.csv"
            write_rows(rows, path, scenario)
            print(f"wrote {len(rows)} rows to {path}")
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
