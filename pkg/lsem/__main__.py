#!/usr/bin/env python3
"""__main__.py

By: Liam Strand
On: Summer 2023

The driver for lsem.

Usage:

python -m lsem <simulate | identify | montecarlo | bode | compare> [options]

Every subcommand accepts --config <file.toml|file.json>; flags given on the
command line override the values in the file.

Exit codes: 0 on success, 1 for usage, configuration and I/O problems, 2 when
identification breaks down numerically.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional

from pydantic import ValidationError

from lsem.commands import (
    cmd_bode,
    cmd_compare,
    cmd_identify,
    cmd_montecarlo,
    cmd_simulate,
)
from lsem.errors import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, NumericalError
from lsem.experiment import build_config, read_config_file

_LOG = logging.getLogger("lsem")


class UsageParser(argparse.ArgumentParser):
    """An argument parser that exits with EXIT_USAGE on bad arguments"""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    """Configures the options every subcommand shares
    Parameters: The argument parser to configure
       Returns: None
       Effects: Adds arguments to the argument parser
    """
    parser.add_argument("--config", type=Path, help="TOML or JSON experiment file")
    parser.add_argument("--model", type=Path, help="True model JSON file")
    parser.add_argument("--seed", type=int, help="Base random seed")
    parser.add_argument("--runs", type=int, help="Number of Monte Carlo runs")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument(
        "--jobs", type=int, help="Worker processes (default: all cores)"
    )
    parser.add_argument("--tau", type=float, help="Send-on-delta threshold")
    parser.add_argument("--delta", type=float, help="Fast sampling period")
    parser.add_argument("--N", type=int, dest="N", help="Number of grid steps")
    parser.add_argument("--sigma", type=float, help="Input standard deviation")
    parser.add_argument("--particles", type=int, help="Particles per filter")
    parser.add_argument("--max-iters", type=int, help="EM iteration limit")
    parser.add_argument(
        "--form", choices=["shift", "incremental"], help="M-step form"
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    parser.add_argument(
        "--log-file", type=Path, help="Log to this file instead of stderr"
    )


def add_arguments(parser: argparse.ArgumentParser) -> None:
    """Configures the argument parser
    Parameters: The argument parser to configure
       Returns: None
       Effects: Adds the subcommands and their arguments
    """
    parser.description = "EM identification from Lebesgue-sampled data"
    common = argparse.ArgumentParser(add_help=False)
    add_common_arguments(common)

    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser(
        "simulate", parents=[common], help="Simulate and sample a model"
    )

    identify = commands.add_parser(
        "identify", parents=[common], help="Identify a model"
    )
    identify.add_argument("trace", type=Path, help="Trace CSV written by simulate")
    identify.add_argument("--init", type=Path, help="Initial model JSON file")
    identify.add_argument("--method", choices=["ps", "ks"], default="ps")
    identify.add_argument(
        "--smoothed",
        action="store_true",
        help="Also write the smoothed states under the estimate to smoothed.csv",
    )

    commands.add_parser(
        "montecarlo", parents=[common], help="Paired PS-EM / KS-EM Monte Carlo study"
    )

    bode = commands.add_parser("bode", parents=[common], help="Frequency responses")
    bode.add_argument("models", type=Path, nargs="*", help="Model JSON files")

    compare = commands.add_parser(
        "compare", parents=[common], help="Compare estimates with the truth"
    )
    compare.add_argument("truth", type=Path, help="True model JSON file")
    compare.add_argument("estimates", type=Path, nargs="+", help="Estimated models")


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    model = args.model
    if model is None and args.command == "compare":
        model = args.truth
    if model is None and args.command == "bode" and args.models:
        model = args.models[0]
    return {
        "model": model,
        "seed": args.seed,
        "runs": args.runs,
        "out": args.out,
        "jobs": args.jobs,
        "tau": args.tau,
        "delta": args.delta,
        "N": args.N,
        "sigma": args.sigma,
        "em.particles": args.particles,
        "em.max_iters": args.max_iters,
        "em.form": args.form,
    }


def _configure_logging(verbose: int, log_file: Optional[Path]) -> None:
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(
        filename=log_file,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def run(args: argparse.Namespace) -> int:
    """Dispatches a parsed command line
    Parameters: The parsed arguments
       Returns: The exit code
       Effects: Whatever the subcommand does
    """
    try:
        file_data = read_config_file(args.config) if args.config else None
        cfg = build_config(file_data, _overrides(args))

        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "identify":
            cmd_identify(cfg, args.trace, args.init, args.method, args.smoothed)
        elif args.command == "montecarlo":
            cmd_montecarlo(cfg)
        elif args.command == "bode":
            cmd_bode(cfg, args.models)
        elif args.command == "compare":
            cmd_compare(cfg, args.truth, args.estimates)
    except NumericalError as err:
        _LOG.debug("numerical failure", exc_info=True)
        print(f"lsem: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValidationError, ValueError, KeyError) as err:
        _LOG.debug("usage failure", exc_info=True)
        print(f"lsem: {err}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """The Driver"""
    parser = UsageParser(prog="lsem")
    add_arguments(parser)
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.log_file)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
