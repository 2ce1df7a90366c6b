"""
Main module for the demand-response market solver.

This module contains the command-line interface. Exit codes: 0 on success,
2 on invalid input, 3 on solver failure and 4 when the local optimality
certificate fails. Failures also leave an error.json in the output directory.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from src import __version__
from src.config import settings
from src.exceptions import (
    EnumerationGuardError,
    ExportError,
    ScenarioParseError,
    ScenarioValidationError,
    SolverError,
)
from src.logging_setup import logger, setup_logging
from src.pipeline.loader import load_scenario, validation_messages
from src.pipeline.report import emit_report
from src.pipeline.runner import run_dayahead, run_export
from src.pipeline.schemas import RunConfig, RunMode, load_bundle
from src.utils.metrics import dump_metrics

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SOLVER = 3
EXIT_CERTIFICATE = 4


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with one subcommand per run mode."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, help="scenario.json or its directory")
    common.add_argument("--profiles", type=Path, default=None, help="profiles.csv")
    common.add_argument("--request", type=Path, default=None, help="request.csv")
    common.add_argument("--out", type=Path, default=Path("results"), help="Output directory")
    common.add_argument("--metrics-file", type=Path, default=None, help="Prometheus textfile")

    search = argparse.ArgumentParser(add_help=False)
    search.add_argument("--seed", type=int, default=settings.search.seed)
    search.add_argument("--starts", type=int, default=settings.search.starts)
    search.add_argument("--grid-res", type=int, default=settings.search.grid_resolution)
    search.add_argument("--workers", type=int, default=settings.search.workers)
    search.add_argument(
        "--tikhonov",
        type=float,
        default=settings.solver.tikhonov,
        help="Tikhonov selection weight, 0 to switch off",
    )
    search.add_argument("--tol-stat", type=float, default=settings.solver.tol_stat)
    search.add_argument("--tol-comp", type=float, default=settings.solver.tol_comp)
    search.add_argument("--tol-feas", type=float, default=settings.solver.tol_feas)

    parser = argparse.ArgumentParser(
        prog="dr-stackelberg",
        description="Day-ahead DSO pricing against a community of prosumers",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="Load and validate a scenario")
    sub.add_parser("solve", parents=[common, search], help="Solve for a local equilibrium")
    sub.add_parser("baseline", parents=[common, search], help="Solve without the request")
    sub.add_parser("oracle", parents=[common, search], help="Grid oracle, then solve")
    sub.add_parser("export-bigm", parents=[common], help="Write the big-M model as MPS")
    report = sub.add_parser("report", parents=[common], help="Re-emit reports from a bundle")
    report.add_argument("--bundle", type=Path, default=None, help="bundle.json")
    return parser


def run_config(args: argparse.Namespace, mode: RunMode) -> RunConfig:
    """Map parsed arguments to a validated run configuration."""
    values: Dict[str, Any] = {
        "scenario": args.scenario,
        "profiles": args.profiles,
        "request": args.request,
        "out": args.out,
        "mode": mode,
    }
    if hasattr(args, "seed"):
        values.update(
            seed=args.seed,
            starts=args.starts,
            grid_resolution=args.grid_res,
            workers=args.workers,
            tikhonov=args.tikhonov,
            tol_stat=args.tol_stat,
            tol_comp=args.tol_comp,
            tol_feas=args.tol_feas,
        )
    return RunConfig(**values)


def cmd_validate(args: argparse.Namespace) -> int:
    config = run_config(args, RunMode.VALIDATE)
    scen = load_scenario(config.scenario, config.profiles, config.request)
    logger.info("Scenario is valid", N=scen.N, T=scen.T, dt=scen.dt, warnings=scen.warnings())
    return EXIT_OK


def _dayahead(mode: RunMode) -> Callable[[argparse.Namespace], int]:
    def command(args: argparse.Namespace) -> int:
        bundle = run_dayahead(run_config(args, mode))
        if not bundle.certificate.passed:
            logger.warning(
                "Certificate failed",
                worst_improvement=bundle.certificate.worst_improvement,
                tol_improve=bundle.certificate.tol_improve,
            )
            return EXIT_CERTIFICATE
        return EXIT_OK

    return command


def cmd_export(args: argparse.Namespace) -> int:
    path = run_export(run_config(args, RunMode.EXPORT))
    logger.info("Export finished", path=str(path))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = args.bundle or args.out / "bundle.json"
    try:
        bundle = load_bundle(path)
    except FileNotFoundError as exc:
        raise ScenarioParseError(path, "file not found") from exc
    emit_report(bundle, args.out)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "validate": cmd_validate,
    "solve": _dayahead(RunMode.SOLVE),
    "baseline": _dayahead(RunMode.BASELINE),
    "oracle": _dayahead(RunMode.ORACLE),
    "export-bigm": cmd_export,
    "report": cmd_report,
}


def error_payload(exc: Exception) -> Dict[str, Any]:
    """Machine-readable description of a failure."""
    if isinstance(exc, ValidationError):
        details: Dict[str, Any] = {"errors": validation_messages(exc)}
    elif hasattr(exc, "details"):
        details = exc.details()
    else:
        details = {}
    return {"error_type": type(exc).__name__, "message": str(exc), "details": details}


def write_error(out: Path, exc: Exception) -> Optional[Path]:
    """Write error.json into the output directory; never raises."""
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "error.json"
        path.write_text(
            json.dumps(error_payload(exc), indent=2, default=str) + "\n", encoding="utf-8"
        )
        return path
    except OSError as e:
        logger.error("Could not write error file", out=str(out), error=str(e))
        return None


def exit_code(exc: Exception) -> int:
    if isinstance(exc, (ScenarioValidationError, ScenarioParseError, ValidationError)):
        return EXIT_INVALID
    return EXIT_SOLVER


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run the command line interface.

    Args:
        argv: Arguments without the program name, defaults to sys.argv

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    setup_logging()
    logger.info("Starting dr-stackelberg", version=__version__, command=args.command)

    if args.command != "report" and args.scenario is None:
        exc = ScenarioParseError("--scenario", "argument is required")
        write_error(args.out, exc)
        logger.error("Invalid arguments", error=str(exc))
        return EXIT_INVALID

    try:
        code = COMMANDS[args.command](args)
    except (
        ScenarioValidationError,
        ScenarioParseError,
        ValidationError,
        SolverError,
        EnumerationGuardError,
        ExportError,
    ) as exc:
        code = exit_code(exc)
        write_error(args.out, exc)
        logger.error("Run failed", error=str(exc), error_type=type(exc).__name__, exit_code=code)
    except Exception as exc:
        code = EXIT_SOLVER
        write_error(args.out, exc)
        logger.error(
            "Unexpected failure",
            error=str(exc),
            error_type=type(exc).__name__,
            exit_code=code,
            exc_info=True,
        )
    finally:
        if args.metrics_file is not None:
            dump_metrics(args.metrics_file)
    return code


if __name__ == "__main__":
    sys.exit(main())
