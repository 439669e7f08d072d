"""Command line entry point: ``phicaloric <verb> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config
from .errors import ConfigError
from .presets import PRESETS
from .runner import CHECKS, EXIT_CONFIG, describe_check, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phicaloric", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p, need_config=True):
        p.add_argument("--config", required=need_config, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (default: config output.dir)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int)
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--no-cache", action="store_true", help="always re-solve")

    common(sub.add_parser("solve", help="run the solver for every run in a config"))
    common(sub.add_parser("check", help="solve and evaluate the checks of a config"))
    common(sub.add_parser("suite", help="run the bundled acceptance suite (or --config)"), need_config=False)
    sub.add_parser("list-presets", help="print the preset catalog")
    d = sub.add_parser("describe-check", help="document one check")
    d.add_argument("name")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    if args.verb == "list-presets":
        for name in sorted(PRESETS):
            print(f"{name:18s} {PRESETS[name][1]}")
        return 0
    if args.verb == "describe-check":
        try:
            print(describe_check(args.name))
        except KeyError:
            print(f"unknown check {args.name!r}; known: {', '.join(CHECKS)}", file=sys.stderr)
            return EXIT_CONFIG
        return 0

    source = args.config if args.config else config.bundled()
    try:
        res = run_experiment(source, out_dir=args.out, workers=args.workers, seed=args.seed,
                             fmt=args.format, solve_only=args.verb == "solve", use_cache=not args.no_cache)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for r in res.results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.id} ({r.check}) {r.seconds:.1f}s")
    if res.message:
        print(res.message, file=sys.stderr)
    print(json.dumps({"status": res.status, "config_hash": res.config_hash, "out": str(res.out_dir)}))
    return res.status


if __name__ == "__main__":
    sys.exit(main())
