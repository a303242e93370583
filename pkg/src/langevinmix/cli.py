"""Batch driver: ``langevinmix <command> -c config.json [--seed N] [--threads N] [--out DIR]``.

Exit codes: 0 when the report passes, 1 when it fails or the library
raises, 2 for usage and config errors.
"""
import argparse
import json
import logging
import pathlib
import sys
import time
from typing import Optional, Sequence

from . import LangevinMixError, __version__
from .config import ConfigError, config_schema, load_config, with_overrides
from .experiments import run_constants, run_experiment, run_single, run_validate, worker_count
from .ledger import Ledger

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

COMMAND_HELP = {
    "validate": "check the model's structural constants, the drift inequality and the step-size hypothesis",
    "constants": "print the theory constant bundle, optionally over a lambda sweep",
    "run": "run one chain and export its trajectory and environment",
    "lln": "time averages against the stationary target",
    "clt": "Donsker paths, long-run variance and normality over replicas",
    "coupling": "empirical no-coupling curve against the coupling bound",
    "mixing": "partition estimate of the chain's mixing coefficient against the transfer bound",
    "tv": "histogram of the chain at a fixed time against the grid oracle",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")

    parser = argparse.ArgumentParser(prog="langevinmix",
                                     description="SGLD experiments in random environments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    for name, text in COMMAND_HELP.items():
        command = commands.add_parser(name, parents=[common], help=text)
        command.add_argument("-c", "--config", required=True, help="experiment config (JSON)")
        command.add_argument("--seed", type=int, help="override chain.seed")
        command.add_argument("--threads", type=int, help="override chain.threads")
        command.add_argument("--out", help="override output.directory")
        command.add_argument("--db", help="also store the report in this ledger file")
        command.add_argument("--campaign", default="default", help="ledger campaign (default: %(default)s)")
        if name == "constants":
            command.add_argument("--lambdas", type=float, nargs="+", help="step sizes for a sweep")

    commands.add_parser("schema", parents=[common], help="print the config JSON schema")
    history = commands.add_parser("history", parents=[common], help="list the reports of a ledger campaign")
    history.add_argument("--db", required=True, help="ledger file")
    history.add_argument("--campaign", default="default")
    history.add_argument("--experiment", help="only reports of this experiment")
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)


def _execute(args: argparse.Namespace) -> int:
    config = with_overrides(load_config(args.config), seed=args.seed, threads=args.threads, out=args.out)
    out = pathlib.Path(config.output.directory)
    run = None
    started = time.perf_counter()
    if args.command == "validate":
        report = run_validate(config)
    elif args.command == "constants":
        report = run_constants(config, args.lambdas)
    elif args.command == "run":
        report, run = run_single(config)
    else:
        report = run_experiment(config, args.command)
    wall_clock = time.perf_counter() - started

    report.write(out)
    if run is not None and config.output.trajectory:
        run.to_csv(out / "trajectory.csv")
        run.env_trace.save(out / "environment.bin")
    timing = {"command": args.command, "wall_clock_seconds": wall_clock, "threads": worker_count(config)}
    (out / "timing.json").write_text(json.dumps(timing, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    if args.db:
        ledger = Ledger(args.db)
        try:
            report_id = ledger.add_report(args.campaign, report.to_dict(), wall_clock)
        finally:
            ledger.close()
        logger.info("stored report %d in %s/%s", report_id, args.db, args.campaign)

    for note in report.notes:
        logger.warning("%s", note)
    sys.stdout.write(report.to_json())
    logger.info("%s %s in %.2fs", args.command, "passed" if report.passed else "failed", wall_clock)
    return EXIT_PASS if report.passed else EXIT_FAIL


def _history(args: argparse.Namespace) -> int:
    ledger = Ledger(args.db)
    try:
        if args.campaign not in ledger.get_campaigns(args.campaign):
            rows = []
        else:
            rows = ledger.get_reports(args.campaign, experiment=args.experiment)
        listing = [
            {key: row[key] for key in ("id", "experiment", "config_digest", "wall_clock", "created_at")}
            | {"seed": int(row["seed"]), "pass": bool(row["passed"])}
            for row in rows
        ]
    finally:
        ledger.close()
    sys.stdout.write(json.dumps(listing, sort_keys=True, indent=2) + "\n")
    return EXIT_PASS


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        if args.command == "schema":
            sys.stdout.write(json.dumps(config_schema(), sort_keys=True, indent=2) + "\n")
            return EXIT_PASS
        if args.command == "history":
            return _history(args)
        return _execute(args)
    except ConfigError as error:
        logger.error("%s", error)
        return EXIT_USAGE
    except LangevinMixError as error:
        logger.error("%s", error)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
