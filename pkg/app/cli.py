# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Command-line runner: solve, check and sweep."""
# -------------------------------------------
import argparse
import logging
import sys
from typing import Optional, Sequence

import pandas as pd

from app.engine.experiment import run_experiment, run_invariant_checks, sweep
from app.utils.config import config_hash, load_config
from app.utils.reporting import (
    write_metadata,
    write_paths,
    write_report,
    write_table,
)
from app.utils.validation import CoverageError, SolverError

logger = logging.getLogger(__name__)

MODES = ("constrained", "penalized", "dual", "primal", "oracle")


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI file with [problem] [numerics] [solver] [dual] [output]")
    parser.add_argument("--problem", help="registered benchmark name")
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--particles", type=int)
    parser.add_argument("--lambda", dest="total_mass", type=float, help="total mass of the control grid")
    parser.add_argument("--penalty-n", dest="penalty_n", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int, help="worker threads (default: logical cores)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--dump-paths", dest="dump_paths", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbsde", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="run one experiment and write its report")
    _add_run_flags(solve)

    check = commands.add_parser("check", help="run the property suite")
    check.add_argument("--suite", choices=("invariants",), default="invariants")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--paths", type=int, default=20_000)
    check.add_argument("--out", help="write checks.csv here")

    sweep_cmd = commands.add_parser("sweep", help="convergence table over refinement levels")
    _add_run_flags(sweep_cmd)
    sweep_cmd.add_argument("--levels", type=int, default=3)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    keys = (
        "problem",
        "mode",
        "paths",
        "steps",
        "particles",
        "total_mass",
        "penalty_n",
        "seed",
        "threads",
        "out",
        "dump_paths",
    )
    return {key: getattr(args, key, None) for key in keys}


def _solve(args: argparse.Namespace) -> int:
    config = load_config(args.config, **_overrides(args))
    result = run_experiment(config)
    report = result.report
    print(
        f"{report.problem} [{report.mode}] y0 = {report.y0:.6g} +/- {report.stderr:.3g}"
        + (f", oracle {report.oracle.value:.6g}" if report.oracle else "")
        + (f", relative error {report.relative_error:.2%}" if report.relative_error is not None else "")
    )
    if config.out:
        write_report(config.out, report.model_dump())
        write_metadata(config.out, report.config_hash, {"elapsed_seconds": result.elapsed})
        if result.table is not None:
            write_table(config.out, "table.csv", result.table)
        if result.dual_history is not None:
            write_table(config.out, "dual.csv", result.dual_history)
        if result.paths is not None:
            write_paths(config.out, result.paths)
    return 0


def _check(args: argparse.Namespace) -> int:
    rows = run_invariant_checks(seed=args.seed, paths=args.paths)
    frame = pd.DataFrame([row.model_dump() for row in rows])
    print(frame.to_string(index=False))
    if args.out:
        write_table(args.out, "checks.csv", frame)
    return 0 if frame["passed"].all() else 3


def _sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config, **_overrides(args))
    table = sweep(config, args.levels)
    print(table.to_string(index=False))
    if config.out:
        write_table(config.out, "convergence.csv", table)
        write_metadata(config.out, config_hash(config), {"levels": args.levels})
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="[%(asctime)s - %(name)s:%(lineno)d - %(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        level=logging.DEBUG if args.verbose else logging.INFO,
    )
    handlers = {"solve": _solve, "check": _check, "sweep": _sweep}
    try:
        return handlers[args.command](args)
    except CoverageError as e:
        logger.error(f"{e}")
        if e.coverage is not None:
            logger.error(f"bucket coverage (knot x control):\n{e.coverage}")
        return e.exit_code
    except SolverError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
