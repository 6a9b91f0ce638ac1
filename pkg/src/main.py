#!/usr/bin/env python3
"""
otprop - command-line entry point.

    otprop run SCENARIO.json [--out DIR] [--eps E] [--gamma G] [--horizon T]
                             [--seed S] [--atom-budget K]
    otprop batch BATCH.json [--out DIR] [--workers W]
    otprop discrepancy P.json Q.json [--cost-file C.json | --p P --scale S] [--plan FILE.csv]
    otprop version

Exit codes: 0 success, 2 schema violation, 3 numerical failure,
4 infeasible plan (certificate.json written).
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))


def _add_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--eps", type=float, default=None, help="Ambiguity radius (replaces the scenario's)")
    parser.add_argument("--gamma", type=float, default=None, help="CVaR tail probability")
    parser.add_argument("--horizon", type=int, default=None, help="Planning / propagation horizon")
    parser.add_argument("--seed", type=int, default=None, help="Seed for generated samples")
    parser.add_argument("--atom-budget", dest="atom_budget", type=int, default=None,
                        help="Maximum atoms of convolution / Hadamard outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otprop",
        description="Optimal-transport ambiguity sets: discrepancies, propagation and DR-CVaR planning.",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-json", action="store_true", help="JSON-lines log records on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one scenario file")
    run.add_argument("scenario", type=Path)
    _add_overrides(run)

    batch = sub.add_parser("batch", help="Run independent scenarios in parallel")
    batch.add_argument("batch", type=Path)
    batch.add_argument("--workers", type=int, default=None, help="Thread pool size")
    _add_overrides(batch)

    disc = sub.add_parser("discrepancy", help="Exact OT discrepancy between two distributions")
    disc.add_argument("P", type=Path)
    disc.add_argument("Q", type=Path)
    disc.add_argument("--cost-file", type=Path, default=None, help="Cost descriptor JSON")
    disc.add_argument("--p", type=float, default=None, help="Exponent of the scale * ||x - y||^p cost")
    disc.add_argument("--scale", type=float, default=1.0, help="Scale of the power cost")
    disc.add_argument("--plan", type=Path, default=None, help="Write the optimal coupling to this CSV")

    sub.add_parser("version", help="Print the library version")
    return parser


def _read_json(path: Path, what: str):
    from src.services.scenario_runner import ScenarioError
    from src.utils.validators import Validators

    ok, msg = Validators.validate_file_path(str(path))
    if not ok:
        raise ScenarioError(msg)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ScenarioError(f"Malformed {what} file {path}: {e}") from e


def _discrepancy(args, runner) -> int:
    from src.utils.helpers import format_value, write_csv

    scenario = {"kind": "discrepancy", "P": _read_json(args.P, "distribution"),
                "Q": _read_json(args.Q, "distribution")}
    if args.cost_file is not None:
        scenario["cost"] = _read_json(args.cost_file, "cost")
    elif args.p is not None:
        scenario["cost"] = {"kind": "power", "p": args.p, "scale": args.scale}

    output = runner.execute(runner.prepare(scenario))
    result = output.result
    print(format_value(result["value"]))
    pairs = result["plan"]["rows"] * result["plan"]["columns"]
    print(f"support: {result['support_size']} of {pairs} pairs")
    print(f"marginal residuals: rows {format_value(result['row_residual'])}, "
          f"columns {format_value(result['column_residual'])}")
    if args.plan is not None:
        write_csv(output.tables["coupling.csv"], args.plan)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main command-line entry point."""
    # Import after path setup
    from src import __version__
    from src.config.settings import get_settings
    from src.config.logging_config import setup_logging
    from src.services.scenario_runner import EXIT_OK, ScenarioRunner, exit_code_for

    args = build_parser().parse_args(argv)

    if args.command == "version":
        print(__version__)
        return EXIT_OK

    # Setup logging
    settings = get_settings()
    logger = setup_logging(
        args.log_level or settings.log_level,
        log_to_file=settings.log_to_file,
        structured=args.log_json or settings.log_structured,
        log_dir=settings.log_dir,
    )

    # Validate configuration
    is_valid, errors = settings.validate()
    if not is_valid:
        logger.warning(f"Configuration warnings: {errors}")

    runner = ScenarioRunner(settings)
    try:
        if args.command == "discrepancy":
            return _discrepancy(args, runner)

        overrides = {
            "eps": args.eps,
            "gamma": args.gamma,
            "horizon": args.horizon,
            "seed": args.seed,
            "atom_budget": args.atom_budget,
        }
        if args.command == "run":
            output = runner.run(args.scenario, args.out, overrides)
            logger.info(f"Scenario {output.kind} finished ({output.scenario_hash[:12]})")
            return EXIT_OK

        outcomes = runner.run_batch(args.batch, args.out, overrides, args.workers)
        for outcome in outcomes:
            print(f"{outcome.name}\t{outcome.exit_code}\t{outcome.message}")
        return max((o.exit_code for o in outcomes), default=EXIT_OK)

    except Exception as e:  # noqa: BLE001
        code = exit_code_for(e)
        if code == 1:
            logger.exception(f"Unexpected failure: {e}")
        else:
            logger.error(str(e))
        return code


if __name__ == "__main__":
    sys.exit(main())
