from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Literal, NoReturn

import structlog
from pydantic import ValidationError

from mobility.app.config import AppSettings
from mobility.app.dependencies import get_pipeline, get_settings
from mobility.app.errors import CoordinationError, MechanismError, ScenarioError, SolverError
from mobility.app.logging_config import configure_application_logging, run_context
from mobility.app.repositories.results_repository import read_results, write_results
from mobility.app.services.coordination.intersection import IntersectionParams
from mobility.app.services.pipeline_service import (
    CoordinateRequest,
    PipelineRun,
    PlannerOverrides,
    render_report,
)

LOGGER = logging.getLogger("mobility.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATED = 2

_HANDLED_ERRORS = (
    ScenarioError,
    SolverError,
    MechanismError,
    CoordinationError,
    OSError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1, like every other failure."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _equity_bound(raw: str) -> float | Literal["off"]:
    if raw.strip().lower() == "off":
        return "off"
    try:
        value = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number in [0, 1] or 'off', got {raw!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"equity bound must lie in [0, 1], got {value}")
    return value


def _positive_int(raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {raw!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Master seed (default: MOBILITY_DEFAULT_SEED).")
    parser.add_argument("--out", type=Path, help="Results file path.")
    parser.add_argument("--workers", type=_positive_int, help="Thread-pool width.")


def _add_market_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("scenario", type=Path, help="Scenario JSON file.")
    parser.add_argument("--omega1", type=float, help="Weight on total inconvenience.")
    parser.add_argument("--omega2", type=float, help="Weight on total operating cost.")
    parser.add_argument(
        "--equity-gmax",
        type=_equity_bound,
        help="Upper bound on the Gini coefficient of inconveniences, or 'off'.",
    )
    parser.add_argument("--gamma", type=float, help="Per co-traveler crowding penalty.")
    parser.add_argument(
        "--payment-mode",
        choices=("clarke", "clarke-floored", "externality"),
        default="clarke",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="mobility",
        description="Socially-optimal mobility assignment, payments and team coordination.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Solve every subclass and settle payments.")
    _add_market_options(solve)
    _add_run_options(solve)

    verify = commands.add_parser("verify", help="Check IC, IR or WBB of the payment rule.")
    _add_market_options(verify)
    verify.add_argument("property", choices=("ic", "ir", "wbb"))
    _add_run_options(verify)

    coordinate = commands.add_parser(
        "coordinate", help="Solve and simulate a team with delayed information sharing."
    )
    coordinate.add_argument("model", type=Path, nargs="?", help="Team model JSON file.")
    coordinate.add_argument(
        "--intersection",
        action="store_true",
        help="Use the built-in two-vehicle intersection instead of a model file.",
    )
    coordinate.add_argument("--cells", type=int, default=2)
    coordinate.add_argument("--delay", type=int, default=1)
    coordinate.add_argument("--noise", type=float, default=0.0, help="HDV observation noise.")
    coordinate.add_argument("--stall-probability", type=float, default=0.0)
    coordinate.add_argument("--start-jitter", action="store_true")
    coordinate.add_argument("--episodes", type=_positive_int, default=1000)
    coordinate.add_argument("--trajectory-log", type=Path, help="Line-delimited step log path.")
    _add_run_options(coordinate)

    report = commands.add_parser("report", help="Print the table of an existing results file.")
    report.add_argument("results", type=Path)
    return parser


def _parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "coordinate" and (args.model is None) == (not args.intersection):
        parser.error("coordinate needs exactly one of MODEL or --intersection")
    return args


def _overrides(args: argparse.Namespace) -> PlannerOverrides:
    return PlannerOverrides(
        omega1=args.omega1,
        omega2=args.omega2,
        equity_bound=args.equity_gmax,
        co_traveler_penalty=args.gamma,
    )


def _run(args: argparse.Namespace, settings: AppSettings) -> PipelineRun:
    pipeline = get_pipeline()
    if args.workers is not None:
        pipeline = pipeline.with_workers(args.workers)
    seed = settings.default_seed if args.seed is None else args.seed
    if args.command == "solve":
        return pipeline.solve(
            args.scenario,
            seed=seed,
            overrides=_overrides(args),
            payment_mode=args.payment_mode,
        )
    if args.command == "verify":
        return pipeline.verify(
            args.scenario,
            args.property,
            seed=seed,
            overrides=_overrides(args),
            payment_mode=args.payment_mode,
        )
    intersection = None
    if args.intersection:
        intersection = IntersectionParams(
            cells=args.cells,
            delay=args.delay,
            hdv_noise=args.noise,
            stall_probability=args.stall_probability,
            start_jitter=args.start_jitter,
        )
    return pipeline.coordinate(
        CoordinateRequest(
            model_path=args.model,
            intersection=intersection,
            episodes=args.episodes,
            trajectory_log=args.trajectory_log,
        ),
        seed=seed,
    )


def _execute(args: argparse.Namespace, settings: AppSettings) -> int:
    if args.command == "report":
        sys.stdout.write(render_report(read_results(args.results)))
        return EXIT_OK
    run = _run(args, settings)
    structlog.contextvars.bind_contextvars(run_hash=run.run_hash[:12])
    for note in run.notes:
        LOGGER.warning("%s", note)
    out = args.out or settings.results_dir / f"{args.command}-{run.run_hash[:12]}.json"
    write_results(run.envelope, out)
    sys.stdout.write(render_report(run.envelope))
    return run.exit_code


def main(argv: Sequence[str] | None = None) -> int:
    args = _parse_args(argv)
    try:
        settings = get_settings()
    except ValidationError as exc:
        print(f"mobility: error: invalid settings: {exc}", file=sys.stderr)
        return EXIT_ERROR
    configure_application_logging(settings)
    with run_context(command=args.command):
        try:
            return _execute(args, settings)
        except _HANDLED_ERRORS as exc:
            LOGGER.debug("command failed command=%s", args.command, exc_info=True)
            print(f"mobility: error: {exc}", file=sys.stderr)
            return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
