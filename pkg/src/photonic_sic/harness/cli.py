"""Command-line entry point.

Examples::

    photonic-sic scenarios list
    photonic-sic scenarios show SI1 > si1.yaml
    photonic-sic run --config si1.yaml --seed 3 --out runs/si1
    photonic-sic sweep --config si1.yaml --param estimator.fixed_order --values 120,200,320
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from .config import ConfigError, load_config
from .runner import StageError, run_single, run_sweep
from .scenarios import describe, fixture_text, load_scenario, scenario_names


def _parse_values(text: str) -> list:
    """Comma-separated list; each item is read as a YAML scalar (so 1, 1.5, null, true work)."""
    items = [v.strip() for v in text.split(",") if v.strip()]
    if not items:
        raise ConfigError("--values must list at least one value")
    return [yaml.safe_load(v) for v in items]


def _cmd_scenarios(args) -> int:
    if args.action == "list":
        for name in scenario_names():
            print(describe(load_scenario(name)).splitlines()[0])
        return 0
    if not args.name:
        print("error: 'scenarios show' needs a scenario name", file=sys.stderr)
        return 2
    try:
        sys.stdout.write(fixture_text(args.name))
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    return 0


def _cmd_run(args) -> int:
    cfg, text = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    report = run_single(cfg, config_text=text)
    if args.seed is not None:
        report.summary["seed"] = args.seed
    report.write(out)
    for k in ("order", "converged", "sic_depth_db", "evm_on_pct", "symbol_errors_on"):
        if k in report.summary:
            print(f"{k}={report.summary[k]}")
    print(f"wrote {out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg, text = load_config(args.config)
    values = _parse_values(args.values) if args.values is not None else None
    out = Path(args.out if args.out is not None else cfg.output_dir)
    reports, summary = run_sweep(cfg, args.param, values, args.workers, out, config_text=text)
    sys.stdout.write(summary)
    failed = sum(r is None for r in reports)
    if failed:
        print(f"{failed} of {len(reports)} sweep points failed", file=sys.stderr)
    return 1 if failed == len(reports) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photonic-sic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("--config", required=True, help="YAML experiment config")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="output directory (default: output_dir from the config)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run one experiment per parameter value")
    s.add_argument("--config", required=True)
    s.add_argument("--param", help="dotted config key, e.g. scenario.si.baud_gbaud")
    s.add_argument("--values", help="comma-separated values, e.g. 0.1,0.25,0.5")
    s.add_argument("--workers", type=int, help="parallel worker processes")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("scenarios", help="list or print the built-in scenarios")
    c.add_argument("action", choices=("list", "show"))
    c.add_argument("name", nargs="?")
    c.set_defaults(func=_cmd_scenarios)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, OSError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
