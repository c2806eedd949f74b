"""Command line entry point: ``duffing-qsd {run,sweep,classical,oracle-check}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, PRESETS, build_config, parse_config
from .runner import config_from_manifest, oracle_check, run, run_classical


def _load_config(args):
    if args.manifest:
        cfg = config_from_manifest(args.manifest)
        values = cfg.to_flat()
    else:
        text = Path(args.config).read_text() if args.config else ""
        values = parse_config(text, preset=args.preset).to_flat()
    for item in args.set or []:
        key, _, raw = item.partition("=")
        values[key.strip()] = json.loads(raw) if raw.strip() else raw
    if args.seed is not None:
        values["seeds.base"] = args.seed
    if args.out:
        values["outputs.directory"] = args.out
    return build_config(values)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="duffing-qsd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "classical", "oracle-check"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="config file with dotted keys (section.key = value)")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--manifest", help="re-run the config recorded in a manifest")
        p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (JSON value)")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        cfg = _load_config(args)
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command in ("run", "sweep"):
        try:
            summary = run(cfg, jobs=args.jobs, require_sweep=args.command == "sweep")
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if summary["verdict"]:
            print(f"verdict: {summary['verdict']}")
    elif args.command == "classical":
        summary = run_classical(cfg)
        print(f"lambda_max: {summary['lambda_max']:.6f}  interwell crossings: {summary['interwell_count']}")
    else:
        summary = oracle_check(cfg, jobs=args.jobs)
        print("oracle check:", "PASS" if summary["passed"] else "FAIL")
    print(f"outputs in {cfg['outputs.directory']}")
    return 0 if summary["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
