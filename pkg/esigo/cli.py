"""
Command line front-end.

    esigo run <config> [--only <id>] [--workers k] [--out dir]
    esigo b2 --weight <descriptor> --dim d
    esigo version

Exit code 0 iff every executed experiment passes its verdict, 1 on a failed
verdict, 2 on invalid configuration.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from . import __version__
from .config import load_config
from .errors import ConfigurationError, EsigoError
from .experiments import run_all
from .settings import configure_logging, load_environment
from .weights import QuadratureSettings, check_b1, check_b2, parse_weight

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esigo", description="ES-IGO flow experiments")
    parser.add_argument("--log-level", default=None, help="logging level (default from ESIGO_LOG_LEVEL)")
    parser.add_argument("--env-file", default=None, help="read defaults from this .env file")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiments of a config file")
    run.add_argument("config", type=Path)
    run.add_argument("--only", action="append", default=None, metavar="ID",
                     help="run only this experiment id (repeatable)")
    run.add_argument("--workers", type=int, default=None, help="concurrent experiments (default ESIGO_WORKERS)")
    run.add_argument("--out", type=Path, default=None, help="output directory (default ESIGO_OUTPUT_DIR)")

    b2 = commands.add_parser("b2", help="report alpha and the B2 verdict of a weight function")
    b2.add_argument("--weight", required=True,
                    help="weight descriptor, a name or an inline mapping such as '{kind: power, k: 3}'")
    b2.add_argument("--dim", type=int, default=1)
    b2.add_argument("--tol", type=float, default=QuadratureSettings.abs_tol, help="quadrature tolerance")

    commands.add_parser("version", help="print the package version")
    return parser


def command_run(args: argparse.Namespace, env) -> int:
    specs = load_config(args.config, args.only)
    out_dir = args.out or env.output_dir
    workers = args.workers or env.workers
    reports = asyncio.run(run_all(specs, out_dir, workers))

    failed = 0
    for report in reports:
        print(f"[{report['verdict'].upper()}] {report['id']} ({report['mode']}, {report['runtime_seconds']:.1f}s)")
        for line in report.get("lines", []):
            print(f"    {line}")
        if report["verdict"] != "pass":
            failed += 1
            for check in report.get("checks", []):
                if not check["passed"]:
                    print(f"    failed check: {check['name']}")
            if "error" in report:
                print(f"    error: {report['error']}")
    print(f"{len(reports) - failed}/{len(reports)} experiments passed; outputs in {out_dir}")
    return EXIT_OK if failed == 0 else EXIT_FAILED


def command_b2(args: argparse.Namespace) -> int:
    try:
        descriptor = yaml.safe_load(args.weight)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse weight descriptor: {e}") from e
    if args.dim < 1:
        raise ConfigurationError(f"--dim must be positive, got {args.dim}")
    w = parse_weight(descriptor)
    report = check_b2(w, args.dim, QuadratureSettings(abs_tol=args.tol))
    print(f"alpha = {report.alpha:.12g}")
    print(f"B1: {check_b1(w).verdict}")
    print(f"B2: {report.verdict}")
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    env = load_environment(args.env_file)
    configure_logging(args.log_level or env.log_level)

    try:
        if args.command == "version":
            print(f"esigo {__version__}")
            return EXIT_OK
        if args.command == "b2":
            return command_b2(args)
        return command_run(args, env)
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EsigoError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
