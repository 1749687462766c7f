"""Command line front end.

Exit codes: 0 on success, 2 when some sweep cells (or selftest checks)
failed, 1 for configuration or usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, MajorantError
from .experiments import EXPERIMENTS, run_experiment, selftest


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; we reserve 2 for partial
    # experiment failures, so route usage problems through ConfigError.
    def error(self, message):
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="experiment config file")
    parser.add_argument("--seed", type=int, default=0,
                        help="master seed (default 0)")
    parser.add_argument("--out", metavar="DIR", default="out",
                        help="output directory (default ./out)")
    parser.add_argument("--workers", type=int, default=1,
                        help="thread workers for sweep cells (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="majorant",
                     description="optimisation and generalisation experiments")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_common(p)
    p = sub.add_parser("selftest", help="run quick internal consistency checks")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("a command is required (see --help)")
        if args.command == "selftest":
            return 2 if selftest() else 0
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        sections = load_config(args.config) if args.config else {}
        failures = run_experiment(
            args.command, sections, args.seed, args.out, args.workers
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MajorantError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if failures:
        for cell, err in failures:
            print(f"cell {cell} failed: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
