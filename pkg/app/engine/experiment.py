# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Experiment orchestration shared by the command line and the run service.

A run resolves the benchmark, builds the grids, dispatches the solver mode,
computes the benchmark's oracle and assembles the report. The invariant
suite and the convergence sweep live here as well.
"""
# -------------------------------------------
import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import pandas as pd

from app.dataclasses.paths import IntensityControl, PathBatch
from app.dataclasses.problem import ControlGrid, TimeGrid
from app.dataclasses.solution import BsdeSolution
from app.engine.benchmarks import Benchmark, bangbang1d, get_benchmark, lqg_po
from app.engine.bsde import (
    build_scenarios,
    evaluate_policy_from_solution,
    solve_constrained,
    solve_penalized,
)
from app.engine.dual import (
    IntensityFamily,
    estimate_randomized_gain,
    reference_cache,
    reweighted_gain,
    search_intensity,
)
from app.engine.forward import simulate_randomized_batch
from app.engine.model import make_uniform_grid
from app.engine.oracles import hjb_validated_value, lqg_kalman_value, plain_mc_value
from app.engine.randomizer import (
    construct_timechange_batch,
    doleans_kappa_batch,
    simulate_marks_poisson_batch,
)
from app.schemas.experiment import CheckRow, ExperimentConfig, ExperimentReport, OracleReport
from app.utils.config import config_hash
from app.utils.rng import derive_seed, make_rng
from app.utils.stats import combined_stderr, mean_stderr
from app.utils.validation import NotApplicableError, ValidationError

logger = logging.getLogger(__name__)

LQG_BRACKET_SLACK = 0.05
CHECK_SIGMAS = 4.0
BOOTSTRAP_STREAM = 1


@dataclass(slots=True)
class RunSetup:
    bench: Benchmark
    grid: ControlGrid
    tgrid: TimeGrid
    particles: int


@dataclass(slots=True)
class ExperimentResult:
    report: ExperimentReport
    table: Optional[pd.DataFrame] = None
    dual_history: Optional[pd.DataFrame] = None
    paths: Optional[PathBatch] = None
    elapsed: float = 0.0


def resolve(config: ExperimentConfig) -> RunSetup:
    bench = get_benchmark(config.problem)
    grid = bench.grid
    if config.total_mass is not None:
        grid = grid.with_total_mass(config.total_mass)
    steps = config.steps or bench.steps
    particles = config.particles or bench.particles
    tgrid = make_uniform_grid(bench.spec.horizon, steps)
    return RunSetup(bench=bench, grid=grid, tgrid=tgrid, particles=particles)


def oracle_report(setup: RunSetup, config: ExperimentConfig) -> Optional[OracleReport]:
    bench, grid, tgrid = setup.bench, setup.grid, setup.tgrid
    if bench.oracle == "hjb":
        validated = hjb_validated_value(bench.spec, grid, tgrid, nodes=config.lattice_nodes)
        return OracleReport(
            kind="hjb",
            value=validated.value,
            details={"coarse": validated.coarse, "relative_change": validated.relative_change},
        )
    if bench.oracle == "lqg":
        bracket = lqg_kalman_value(bench.lqg, grid, tgrid, config.oracle_paths, config.seed)
        return OracleReport(
            kind="lqg",
            value=bracket.continuous,
            stderr=bracket.projected_stderr,
            lower=bracket.lower - LQG_BRACKET_SLACK * abs(bracket.lower),
            upper=bracket.upper,
            details={"projected": bracket.projected},
        )
    if bench.oracle == "plain":
        value, stderr = plain_mc_value(bench.spec, grid, tgrid, config.oracle_paths, config.seed)
        return OracleReport(kind="plain", value=value, stderr=stderr)
    if bench.oracle == "closed_form" and bench.reference_value is not None:
        return OracleReport(kind="closed_form", value=bench.reference_value)
    return None


def solve_bsde(setup: RunSetup, config: ExperimentConfig, mode: str) -> BsdeSolution:
    batch = build_scenarios(
        setup.bench.spec,
        setup.grid,
        setup.tgrid,
        config.paths,
        setup.particles,
        config.seed,
        mark_law=config.mark_law,
        initial=config.initial_mark,
        feature_map=config.feature_map,
        quant_k=config.quant_k,
        resample=config.resample,
        workers=config.threads,
    )
    knots = setup.bench.knots if config.knots is None else config.knots
    resampling = derive_seed(config.seed, BOOTSTRAP_STREAM)
    if mode == "penalized":
        return solve_penalized(
            batch,
            setup.bench.spec,
            setup.grid,
            config.penalty_n,
            degree=config.degree,
            penalty_step=config.penalty_step,
            min_bucket=config.min_bucket,
            regression=config.regression,
            knots=knots,
            replicates=config.bootstrap,
            seed=resampling,
        )
    return solve_constrained(
        batch,
        setup.bench.spec,
        setup.grid,
        degree=config.degree,
        estimator=config.estimator,
        min_bucket=config.min_bucket,
        regression=config.regression,
        knots=knots,
        replicates=config.bootstrap,
        seed=resampling,
    )


def knot_table(sol: BsdeSolution) -> pd.DataFrame:
    """Per-knot diagnostics: mean value, bucket coverage and residuals per control."""
    steps = sol.coverage.shape[0]
    frame = pd.DataFrame(
        {
            "knot": np.arange(steps + 1),
            "t": sol.knots,
            "mean_value": sol.values.mean(axis=0),
        }
    )
    for j in range(sol.coverage.shape[1]):
        frame[f"coverage_{j}"] = np.append(sol.coverage[:, j], 0)
        frame[f"residual_{j}"] = np.append(sol.residuals[:, j], np.nan)
    return frame


def _relative_error(y0: float, oracle: Optional[OracleReport]) -> Optional[float]:
    if oracle is None or oracle.value == 0:
        return None
    return abs(y0 - oracle.value) / abs(oracle.value)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run one configured experiment and assemble its report."""
    started = time.perf_counter()
    digest = config_hash(config)
    setup = resolve(config)
    spec = setup.bench.spec
    logger.info(
        f"Run {digest[:12]}: {config.problem} / {config.mode}, P={config.paths}, "
        f"N={setup.tgrid.steps}, M={setup.particles}, Lambda={setup.grid.total_mass:g}"
    )

    oracle = None
    try:
        oracle = oracle_report(setup, config)
    except NotApplicableError as e:
        if config.mode == "oracle":
            raise
        logger.warning(f"No oracle for {config.problem}: {e}")

    table: Optional[pd.DataFrame] = None
    history: Optional[pd.DataFrame] = None
    paths: Optional[PathBatch] = None
    solution: dict[str, Any] = {}
    dual: Optional[dict[str, Any]] = None
    primal: Optional[dict[str, Any]] = None

    if config.mode in ("constrained", "penalized", "primal"):
        sol = solve_bsde(setup, config, "penalized" if config.mode == "penalized" else "constrained")
        solution = sol.to_dict(digest)
        table = knot_table(sol)
        y0, stderr = sol.y0, sol.stderr
        if config.mode == "primal" or config.policy_paths:
            gain, gain_err = evaluate_policy_from_solution(
                sol,
                spec,
                setup.grid,
                setup.tgrid,
                config.policy_paths or config.paths,
                setup.particles,
                config.seed + 1,
            )
            primal = {"gain": gain, "stderr": gain_err, "policy": "greedy_filter"}
            if config.mode == "primal":
                y0, stderr = gain, gain_err
    elif config.mode == "dual":
        family = IntensityFamily(
            setup.tgrid,
            setup.grid.size,
            blocks=config.dual_blocks,
            lower=config.dual_lower,
            upper=config.dual_upper,
        )
        search = search_intensity(
            spec,
            setup.grid,
            setup.tgrid,
            family,
            config.dual_budget,
            config.seed,
            paths=config.paths,
            workers=config.threads,
        )
        y0, stderr = search.gain, search.stderr
        dual = {
            "evaluations": search.evaluations,
            "theta": search.theta.tolist(),
            "screened_gain": search.screened_gain,
            "rejected": search.rejected,
        }
        history = pd.DataFrame(search.history)
    else:
        if oracle is None:
            raise NotApplicableError(f"{config.problem} has no oracle")
        y0, stderr = oracle.value, oracle.stderr or 0.0

    if config.dump_paths:
        paths = simulate_randomized_batch(
            spec, setup.grid, setup.tgrid, config.paths, config.seed, workers=config.threads
        )

    report = ExperimentReport(
        problem=config.problem,
        mode=config.mode,
        config_hash=digest,
        seed=config.seed,
        steps=setup.tgrid.steps,
        paths=config.paths,
        particles=setup.particles,
        total_mass=setup.grid.total_mass,
        y0=float(y0),
        stderr=float(stderr),
        oracle=oracle,
        relative_error=_relative_error(float(y0), oracle),
        solution=solution,
        dual=dual,
        primal=primal,
    )
    elapsed = time.perf_counter() - started
    logger.info(f"Run {digest[:12]} finished: y0 = {y0:.6g} (stderr {stderr:.3g}) in {elapsed:.1f}s")
    return ExperimentResult(
        report=report, table=table, dual_history=history, paths=paths, elapsed=elapsed
    )


def sweep(config: ExperimentConfig, levels: int = 3) -> pd.DataFrame:
    """Refine (dt, P, M) to (dt/2, 4P, 4M) per level and record y0."""
    if levels < 1:
        raise ValidationError(f"levels must be >= 1, got {levels}")
    mode = config.mode if config.mode == "penalized" else "constrained"
    base = resolve(config)
    rows = []
    for level in range(levels):
        factor = 4**level
        refined = config.model_copy(
            update={
                "steps": base.tgrid.steps * 2**level,
                "paths": config.paths * factor,
                "particles": base.particles * factor,
            }
        )
        setup = resolve(refined)
        sol = solve_bsde(setup, refined, mode)
        rows.append(
            {
                "level": level,
                "dt": float(setup.tgrid.dt[0]),
                "paths": refined.paths,
                "particles": setup.particles,
                "y0": sol.y0,
                "stderr": sol.stderr,
            }
        )
        logger.info(f"Sweep level {level}: y0 = {sol.y0:.6g}")
    return pd.DataFrame(rows, columns=["level", "dt", "paths", "particles", "y0", "stderr"])


def _row(name: str, statistic: float, tolerance: float, detail: str = "") -> CheckRow:
    passed = bool(np.isfinite(statistic) and statistic <= tolerance)
    logger.info(f"check {name}: {statistic:.4g} (tolerance {tolerance:.4g}) {'ok' if passed else 'FAILED'}")
    return CheckRow(check=name, statistic=float(statistic), tolerance=tolerance, passed=passed, detail=detail)


def _constant_intensity(grid: ControlGrid, c: float) -> IntensityControl:
    return IntensityControl(
        fn=lambda t, f, m, n: np.full((np.shape(m)[0], grid.size), c),
        lower=c,
        upper=c,
        name=f"const{c:g}",
    )


def check_kappa_normalization(seed: int, paths: int, controls: int = 3) -> CheckRow:
    bench = bangbang1d()
    tgrid = make_uniform_grid(bench.spec.horizon, 16)
    family = IntensityFamily(tgrid, bench.grid.size)
    cache = reference_cache(bench.spec, bench.grid, tgrid, paths, seed)
    rng = make_rng(seed + 1)
    worst = 0.0
    for _ in range(controls):
        nu = family.control(family.random(rng))
        kappa = doleans_kappa_batch(cache.jumps, bench.grid, nu, tgrid.horizon, tgrid)
        mean, stderr = mean_stderr(kappa)
        worst = max(worst, abs(mean - 1.0) / stderr)
    return _row("kappa_normalization", worst, CHECK_SIGMAS, f"{controls} random intensities")


def check_girsanov(seed: int, paths: int, controls: int = 2) -> CheckRow:
    bench = bangbang1d()
    tgrid = make_uniform_grid(bench.spec.horizon, 16)
    family = IntensityFamily(tgrid, bench.grid.size)
    cache = reference_cache(bench.spec, bench.grid, tgrid, paths, seed)
    rng = make_rng(seed + 2)
    worst = 0.0
    for i in range(controls):
        nu = family.control(family.random(rng))
        weighted = reweighted_gain(cache, bench.grid, nu)
        direct = estimate_randomized_gain(
            bench.spec, bench.grid, tgrid, nu, paths, mode="direct", seed=seed + 10 + i
        )
        gap = abs(weighted.mean - direct.mean) / combined_stderr(weighted.stderr, direct.stderr)
        worst = max(worst, gap)
    return _row("girsanov_consistency", worst, CHECK_SIGMAS, "reweighted vs thinned")


def check_separated_gain(seed: int, paths: int, particles: int = 100) -> CheckRow:
    bench = lqg_po()
    tgrid = make_uniform_grid(bench.spec.horizon, 16)
    batch = build_scenarios(bench.spec, bench.grid, tgrid, paths, particles, seed)
    filtered = mean_stderr(batch.filtered_gain())
    pathwise = mean_stderr(batch.path_gain)
    gap = abs(filtered[0] - pathwise[0]) / combined_stderr(filtered[1], pathwise[1])
    return _row("separated_gain", gap, CHECK_SIGMAS, f"M={particles}")


def check_timechange_law(seed: int, samples: int, levels=(0.5, 1.0, 2.0)) -> CheckRow:
    """KS distance of the first jump time against 1 - exp(-Lambda c t) for nu = c."""
    bench = bangbang1d()
    grid, horizon = bench.grid, bench.spec.horizon
    tolerance = max(0.01, 1.63 / math.sqrt(samples))
    worst = 0.0
    for i, c in enumerate(levels):
        skeleton = simulate_marks_poisson_batch(grid, c * horizon, samples, seed + 100 + i)
        jumps = construct_timechange_batch(
            grid, _constant_intensity(grid, c), skeleton, horizon, seed + 200 + i
        )
        first = jumps.times[:, 0] if jumps.times.shape[1] else np.full(samples, np.inf)
        observed = np.sort(first[np.isfinite(first)])
        cdf = 1.0 - np.exp(-grid.total_mass * c * observed)
        ranks = np.arange(1, observed.size + 1)
        distance = max(
            np.max(ranks / samples - cdf, initial=0.0),
            np.max(cdf - (ranks - 1) / samples, initial=0.0),
            abs(observed.size / samples - (1.0 - math.exp(-grid.total_mass * c * horizon))),
        )
        worst = max(worst, float(distance))
    return _row("timechange_first_jump_law", worst, tolerance, "KS distance")


def check_determinism(seed: int, paths: int = 600) -> CheckRow:
    bench = lqg_po()
    tgrid = make_uniform_grid(bench.spec.horizon, 8)
    runs = [
        build_scenarios(bench.spec, bench.grid, tgrid, paths, 8, seed, chunk=128, workers=w)
        for w in (1, 2)
    ]
    same = all(
        np.array_equal(getattr(runs[0], name), getattr(runs[1], name))
        for name in ("i_idx", "features", "running", "terminal", "path_gain")
    )
    return _row("thread_determinism", 0.0 if same else 1.0, 0.0, "1 vs 2 workers")


def run_invariant_checks(seed: int = 0, paths: int = 20_000) -> list[CheckRow]:
    """Desk-scale property suite; each row passes when statistic <= tolerance."""
    scenarios = max(200, paths // 20)
    return [
        check_kappa_normalization(seed, paths),
        check_girsanov(seed, paths),
        check_separated_gain(seed, scenarios),
        check_timechange_law(seed, paths),
        check_determinism(seed),
    ]
