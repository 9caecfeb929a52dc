# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Backward regression schemes for the randomized value.

Scenarios carry the unnormalized filter of the gains. At every knot the
targets are divided by the filter's mass (known at that knot), regressed
on a shared basis of the filter features (polynomials plus optional
hinges), either pooled across controls or bucket by bucket, and multiplied
back.
"""
# -------------------------------------------
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.preprocessing import PolynomialFeatures

from app.dataclasses.filtering import CloudBatch
from app.dataclasses.paths import IntensityControl, JumpBatch, ObservationPath
from app.dataclasses.problem import ControlGrid, ProblemSpec, TimeGrid
from app.dataclasses.solution import BsdeSolution, FeatureBasis, RegressionModel, ScenarioBatch
from app.engine.filter import (
    cloud_features,
    cloud_mass,
    init_clouds,
    propagate_clouds,
    running_by_control,
    terminal_by_cloud,
)
from app.engine.forward import euler_step, simulate_primal_batch
from app.engine.randomizer import (
    doleans_kappa_batch,
    draw_initial_marks,
    simulate_marks_poisson_batch,
)
from app.utils.parallel import DEFAULT_CHUNK, map_chunks
from app.utils.rng import SeedLike, make_rng, standard_normals
from app.utils.stats import mean_stderr
from app.utils.validation import CoverageError, ValidationError

logger = logging.getLogger(__name__)

RCOND = 1e-10
MIN_BUCKET = 50
CONSTANT_TOL = 1e-9
MARK_LAWS = ("poisson", "resampled")
ESTIMATORS = ("crossfit", "plain")
PENALTY_STEPS = ("implicit", "explicit")
REGRESSIONS = ("joint", "bucket")
BOOTSTRAP_REPLICATES = 16


def _scenario_chunk(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    particles: int,
    mark_law: str,
    initial: str,
    feature_map: str,
    quant_k: int,
    resample: str,
    count: int,
    rng: np.random.Generator,
) -> ScenarioBatch:
    steps, dt, knots = tgrid.steps, tgrid.dt, tgrid.knots
    w_inc = standard_normals(rng, (count, steps, spec.dim_w)) * np.sqrt(dt)[None, :, None]
    jumps: Optional[JumpBatch] = None
    if mark_law == "poisson":
        start = draw_initial_marks(grid, count, rng) if initial == "random" else None
        jumps = simulate_marks_poisson_batch(grid, tgrid.horizon, count, rng, start)
        i_idx = np.stack([jumps.marks_at(t) for t in knots], axis=1)
    else:
        i_idx = rng.integers(0, grid.size, size=(count, steps + 1))

    signal = np.asarray(spec.init_sampler(rng, count), dtype=float).reshape(count, spec.dim_x)
    v_signal = standard_normals(rng, (count, steps, spec.dim_v)) * np.sqrt(dt)[None, :, None]
    clouds: CloudBatch = init_clouds(spec, count, particles, rng)

    features = []
    mass = np.empty((count, steps + 1))
    running = np.empty((count, steps, grid.size))
    path_running = np.zeros(count)
    for k in range(steps):
        features.append(cloud_features(clouds, spec, feature_map, quant_k, seed=k))
        mass[:, k] = cloud_mass(clouds, spec)
        running[:, k] = running_by_control(clouds, spec, grid, knots[k])
        a = grid.values(i_idx[:, k])
        path_running += spec.running_gain(knots[k], signal, a) * dt[k]
        signal = euler_step(spec, knots[k], signal, a, dt[k], w_inc[:, k], v_signal[:, k])
        clouds = propagate_clouds(spec, clouds, w_inc[:, k], a, knots[k], dt[k], rng, resample)
    features.append(cloud_features(clouds, spec, feature_map, quant_k, seed=steps))
    mass[:, steps] = cloud_mass(clouds, spec)

    return ScenarioBatch(
        tgrid=tgrid,
        grid=grid,
        i_idx=i_idx,
        features=np.stack(features, axis=1),
        running=running,
        terminal=terminal_by_cloud(clouds, spec),
        mass=mass,
        path_gain=path_running + spec.terminal_gain(signal),
        observation=ObservationPath.from_increments(tgrid, w_inc),
        jumps=jumps,
        feature_map=feature_map,
        quant_k=quant_k,
    )


def _concat(parts: list[ScenarioBatch]) -> ScenarioBatch:
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    jumps = None
    if first.jumps is not None:
        jumps = JumpBatch.concatenate([p.jumps for p in parts])
    return ScenarioBatch(
        tgrid=first.tgrid,
        grid=first.grid,
        i_idx=cat("i_idx"),
        features=cat("features"),
        running=cat("running"),
        terminal=cat("terminal"),
        mass=cat("mass"),
        path_gain=cat("path_gain"),
        observation=ObservationPath(
            tgrid=first.tgrid, values=np.concatenate([p.observation.values for p in parts])
        ),
        jumps=jumps,
        feature_map=first.feature_map,
        quant_k=first.quant_k,
    )


def build_scenarios(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    size: int,
    particles: int,
    seed: SeedLike,
    mark_law: str = "poisson",
    initial: str = "random",
    feature_map: str = "moments",
    quant_k: int = 4,
    resample: str = "multinomial",
    chunk: int = DEFAULT_CHUNK,
    workers: Optional[int] = None,
) -> ScenarioBatch:
    """Simulate ``size`` (W, I) scenarios with an ``particles``-point filter each.

    ``mark_law="poisson"`` draws the marks from the reference Poisson measure
    (initial mark from lambda/Lambda when ``initial="random"``, the anchor for
    ``initial="anchor"``); ``"resampled"`` re-draws the mark uniformly at
    every knot.
    """
    if mark_law not in MARK_LAWS:
        raise ValidationError(f"unknown mark law {mark_law!r}")
    if initial not in ("random", "anchor"):
        raise ValidationError(f"unknown initial mark rule {initial!r}")
    if not np.isclose(tgrid.horizon, spec.horizon):
        raise ValidationError("time grid and problem horizons differ")

    def job(count: int, rng: np.random.Generator) -> ScenarioBatch:
        return _scenario_chunk(
            spec,
            grid,
            tgrid,
            particles,
            mark_law,
            initial,
            feature_map,
            quant_k,
            resample,
            count,
            rng,
        )

    batch = _concat(map_chunks(job, size, seed, chunk=chunk, workers=workers))
    logger.info(
        f"Built {batch.size} scenarios ({particles} particles, {tgrid.steps} steps, "
        f"mark law {mark_law})"
    )
    return batch


def _hinge_knots(z: np.ndarray, knots: int) -> list[np.ndarray]:
    if knots <= 0:
        return [np.empty(0) for _ in range(z.shape[1])]
    levels = np.linspace(0.0, 1.0, knots + 2)[1:-1]
    out = []
    for column in z.T:
        qs = np.unique(np.quantile(column, levels))
        out.append(qs[(qs > column.min()) & (qs < column.max())])
    return out


def _basis(features: np.ndarray, degree: int, knots: int = 0) -> FeatureBasis:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    keep = std > CONSTANT_TOL * (1.0 + np.abs(mean))
    if not keep.any():
        return FeatureBasis(center=mean[keep], scale=std[keep], keep=keep, poly=None, degree=degree)
    z = (features[:, keep] - mean[keep]) / std[keep]
    return FeatureBasis(
        center=mean[keep],
        scale=std[keep],
        keep=keep,
        poly=PolynomialFeatures(degree=degree, include_bias=True).fit(z),
        hinges=_hinge_knots(z, knots),
        degree=degree,
    )


def control_design(grid: ControlGrid) -> np.ndarray:
    """Quadratic features of the standardized control values, one row per control.

    Falls back to one-hot rows when the quadratic features cannot tell the
    controls apart, which reduces the pooled fit to one fit per bucket.
    """
    points = grid.points
    spread = points.std(axis=0)
    live = spread > 0
    if grid.size == 1 or not live.any():
        return np.ones((grid.size, 1))
    z = (points[:, live] - points[:, live].mean(axis=0)) / spread[live]
    ctrl = PolynomialFeatures(degree=min(2, grid.size - 1), include_bias=True).fit_transform(z)
    if ctrl.shape[1] > grid.size or np.linalg.matrix_rank(ctrl) < ctrl.shape[1]:
        return np.eye(grid.size)
    return ctrl


def _check_coverage(
    batch: ScenarioBatch,
    bases: list[FeatureBasis],
    min_bucket: int,
    width: Optional[int],
) -> np.ndarray:
    table = batch.coverage()
    for k, basis in enumerate(bases):
        need = min_bucket if width else max(min_bucket, 5 * basis.dim)
        short = np.flatnonzero(table[k] < need)
        if short.size:
            raise CoverageError(
                f"knot {k}: control buckets {short.tolist()} hold {table[k, short].tolist()} "
                f"scenarios, need {need}; raise the total mass, the path count or "
                f"switch to mark resampling",
                coverage=table,
            )
        if width and batch.size < 10 * basis.dim * width:
            raise CoverageError(
                f"knot {k}: {batch.size} scenarios for a pooled fit with "
                f"{basis.dim * width} columns; raise the path count or lower the degree",
                coverage=table,
            )
    return table


def _fit_buckets(
    design: np.ndarray,
    target: np.ndarray,
    marks: np.ndarray,
    fold_id: np.ndarray,
    controls: int,
    folds: int,
) -> tuple[np.ndarray, np.ndarray, bool]:
    coeffs = np.full((folds, controls, design.shape[1]), np.nan)
    residuals = np.full(controls, np.nan)
    deficient = False
    for j in range(controls):
        squares, members = 0.0, 0
        for f in range(folds):
            rows = (marks == j) & (fold_id == f)
            if not rows.any():
                continue
            coef, _, rank, _ = np.linalg.lstsq(design[rows], target[rows], rcond=RCOND)
            deficient |= bool(rank < design.shape[1])
            coeffs[f, j] = coef
            squares += float(np.sum((target[rows] - design[rows] @ coef) ** 2))
            members += int(rows.sum())
        if members:
            residuals[j] = np.sqrt(squares / members)
    return coeffs, residuals, deficient


def _fit_joint(
    design: np.ndarray,
    target: np.ndarray,
    marks: np.ndarray,
    fold_id: np.ndarray,
    ctrl: np.ndarray,
    folds: int,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """One fit on feature x control products, unfolded into per-control coefficients."""
    size, dim = design.shape
    width = dim * ctrl.shape[1]
    lifted = (design[:, :, None] * ctrl[marks][:, None, :]).reshape(size, width)
    coeffs = np.full((folds, ctrl.shape[0], dim), np.nan)
    fitted = np.zeros(size)
    deficient = False
    for f in range(folds):
        rows = fold_id == f
        if not rows.any():
            continue
        beta, _, rank, _ = np.linalg.lstsq(lifted[rows], target[rows], rcond=RCOND)
        deficient |= bool(rank < width)
        coeffs[f] = (beta.reshape(dim, ctrl.shape[1]) @ ctrl.T).T
        fitted[rows] = lifted[rows] @ beta
    squares = np.bincount(marks, weights=(target - fitted) ** 2, minlength=ctrl.shape[0])
    members = np.bincount(marks, minlength=ctrl.shape[0])
    residuals = np.full(ctrl.shape[0], np.nan)
    np.divide(squares, members, out=residuals, where=members > 0)
    return coeffs, np.sqrt(residuals), deficient


def _fit(design, target, marks, fold_id, ctrl, controls, folds):
    if ctrl is None:
        return _fit_buckets(design, target, marks, fold_id, controls, folds)
    return _fit_joint(design, target, marks, fold_id, ctrl, folds)


@dataclass(slots=True)
class _Sweep:
    """Scenario rows fed to one backward pass; bootstrap passes repeat rows."""

    features: np.ndarray
    marks: np.ndarray
    mass: np.ndarray
    running: np.ndarray
    own: np.ndarray
    terminal: np.ndarray
    fold_id: np.ndarray

    @classmethod
    def take(cls, batch: ScenarioBatch, rows: np.ndarray, own: np.ndarray, folds: int) -> "_Sweep":
        return cls(
            features=batch.features[rows],
            marks=batch.i_idx[rows],
            mass=batch.mass[rows],
            running=batch.running[rows],
            own=own[rows],
            terminal=batch.terminal[rows],
            fold_id=rows % folds,
        )


def _prepare(
    batch: ScenarioBatch,
    grid: ControlGrid,
    degree: int,
    knots: int,
    regression: str,
    min_bucket: int,
):
    if regression not in REGRESSIONS:
        raise ValidationError(f"unknown regression {regression!r}")
    if batch.grid.size != grid.size:
        raise ValidationError("scenario batch was built on another control grid")
    if knots < 0:
        raise ValidationError(f"hinge knot count must be non-negative, got {knots}")
    bases = [_basis(batch.features[:, k], degree, knots) for k in range(batch.tgrid.steps)]
    ctrl = control_design(grid) if regression == "joint" else None
    table = _check_coverage(batch, bases, min_bucket, None if ctrl is None else ctrl.shape[1])
    return bases, ctrl, table


def _bootstrap(
    sweep_fn,
    batch: ScenarioBatch,
    own: np.ndarray,
    folds: int,
    replicates: int,
    seed: SeedLike,
    fallback: np.ndarray,
) -> float:
    """Standard deviation of y0 over scenario resamples, time-0 spread when disabled."""
    if replicates < 2:
        return mean_stderr(fallback)[1]
    rng = make_rng(seed)
    draws = []
    for _ in range(replicates):
        rows = rng.integers(0, batch.size, size=batch.size)
        values = sweep_fn(_Sweep.take(batch, rows, own, folds), record=False)[0]
        y0 = float(values[:, 0].mean())
        if np.isfinite(y0):
            draws.append(y0)
    if len(draws) < 2:
        logger.warning("bootstrap replicates failed, falling back to the time-0 spread")
        return mean_stderr(fallback)[1]
    return float(np.std(draws, ddof=1))


def solve_constrained(
    batch: ScenarioBatch,
    spec: ProblemSpec,
    grid: ControlGrid,
    degree: int = 2,
    estimator: str = "crossfit",
    min_bucket: int = MIN_BUCKET,
    regression: str = "joint",
    knots: int = 0,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: SeedLike = 0,
) -> BsdeSolution:
    """Backward induction Y_k = max_j E[Y_{k+1} + dt f(I_k) | F_k, I_k = a_j].

    ``estimator="crossfit"`` picks the maximizing control with one half of
    the scenarios and evaluates it with the other half's fit, both ways.
    ``regression="joint"`` fits all controls at once on feature x control
    products; ``"bucket"`` fits each control bucket on its own. The standard
    error comes from ``replicates`` bootstrap passes over the scenarios.
    """
    if estimator not in ESTIMATORS:
        raise ValidationError(f"unknown sup estimator {estimator!r}")
    steps, dt = batch.tgrid.steps, batch.tgrid.dt
    bases, ctrl, table = _prepare(batch, grid, degree, knots, regression, min_bucket)
    folds = 2 if estimator == "crossfit" else 1
    own = batch.own_running()

    def sweep(data: _Sweep, record: bool = True):
        size = data.marks.shape[0]
        rows = np.arange(size)
        values = np.empty((size, steps + 1))
        values[:, steps] = data.terminal
        models: list[Optional[RegressionModel]] = [None] * steps
        residuals = np.full((steps, grid.size), np.nan)
        warnings_at: list[int] = []
        for k in range(steps - 1, -1, -1):
            mass = data.mass[:, k]
            target = (values[:, k + 1] + dt[k] * data.own[:, k]) / mass
            design = bases[k].design(data.features[:, k])
            coeffs, residuals[k], deficient = _fit(
                design, target, data.marks[:, k], data.fold_id, ctrl, grid.size, folds
            )
            predictions = [design @ coeffs[f].T for f in range(folds)]
            if folds == 2:
                pick0 = np.argmax(predictions[0], axis=1)
                pick1 = np.argmax(predictions[1], axis=1)
                best = 0.5 * (predictions[1][rows, pick0] + predictions[0][rows, pick1])
            else:
                best = predictions[0].max(axis=1)
            values[:, k] = mass * best
            if record:
                if deficient:
                    warnings_at.append(k)
                    logger.warning(f"knot {k}: rank-deficient regression, truncated pseudo-inverse used")
                models[k] = RegressionModel(
                    basis=bases[k],
                    coeffs=coeffs,
                    bucket_sizes=table[k],
                    residuals=residuals[k],
                    regression=regression,
                    rank_deficient=deficient,
                )
                logger.debug(f"knot {k}: mean value {values[:, k].mean():.6g}")
        return values, models, residuals, warnings_at

    values, models, residuals, warnings_at = sweep(
        _Sweep.take(batch, np.arange(batch.size), own, folds)
    )
    y0 = float(values[:, 0].mean())
    stderr = _bootstrap(sweep, batch, own, folds, replicates, seed, values[:, 0])
    logger.info(f"Constrained scheme ({regression}): y0 = {y0:.6g} (stderr {stderr:.3g})")
    return BsdeSolution(
        y0=y0,
        stderr=stderr,
        mode="constrained",
        models=models,
        values=values,
        coverage=table,
        residuals=residuals,
        knots=np.asarray(batch.tgrid.knots),
        estimator=estimator,
        feature_map=batch.feature_map,
        quant_k=batch.quant_k,
        regression=regression,
        replicates=replicates,
        rank_warnings=sorted(warnings_at),
    )


def implicit_penalty(base: np.ndarray, weights: np.ndarray, c: float) -> np.ndarray:
    """Solve theta_j = base_j + c sum_l lambda_l (theta_l - theta_j)^+ row by row.

    With the controls sorted by decreasing base the solution is explicit:
    theta_(1) = base_(1), theta_(i) = (base_(i) + c sum_{l<i} lambda_l theta_(l)) / (1 + c sum_{l<i} lambda_l).
    """
    order = np.argsort(-base, axis=1, kind="stable")
    sorted_base = np.take_along_axis(base, order, axis=1)
    lam = weights[order]
    theta = np.empty_like(sorted_base)
    acc_mass = np.zeros(base.shape[0])
    acc_value = np.zeros(base.shape[0])
    for i in range(base.shape[1]):
        theta[:, i] = (sorted_base[:, i] + c * acc_value) / (1.0 + c * acc_mass)
        acc_mass += lam[:, i]
        acc_value += lam[:, i] * theta[:, i]
    out = np.empty_like(theta)
    np.put_along_axis(out, order, theta, axis=1)
    return out


def solve_penalized(
    batch: ScenarioBatch,
    spec: ProblemSpec,
    grid: ControlGrid,
    n: int,
    degree: int = 2,
    penalty_step: str = "implicit",
    min_bucket: int = MIN_BUCKET,
    regression: str = "joint",
    knots: int = 0,
    replicates: int = BOOTSTRAP_REPLICATES,
    seed: SeedLike = 0,
) -> BsdeSolution:
    """Penalized scheme with jump-integrand estimates from continuation differences.

    ``penalty_step="explicit"`` adds n dt sum_j (C_j - C_own)^+ lambda_j to
    the own-bucket value; ``"implicit"`` solves the penalty equation at the
    knot, which stays monotone for any n dt Lambda.
    """
    if n < 0 or int(n) != n:
        raise ValidationError(f"penalization must be a non-negative integer, got {n}")
    if penalty_step not in PENALTY_STEPS:
        raise ValidationError(f"unknown penalty step {penalty_step!r}")
    steps, dt = batch.tgrid.steps, batch.tgrid.dt
    bases, ctrl, table = _prepare(batch, grid, degree, knots, regression, min_bucket)
    lam = grid.weights
    own = batch.own_running()

    def sweep(data: _Sweep, record: bool = True):
        size = data.marks.shape[0]
        rows = np.arange(size)
        values = np.empty((size, steps + 1))
        values[:, steps] = data.terminal
        models: list[Optional[RegressionModel]] = [None] * steps
        residuals = np.full((steps, grid.size), np.nan)
        warnings_at: list[int] = []
        for k in range(steps - 1, -1, -1):
            mass = data.mass[:, k]
            marks = data.marks[:, k]
            design = bases[k].design(data.features[:, k])
            coeffs, residuals[k], deficient = _fit(
                design, values[:, k + 1] / mass, marks, data.fold_id, ctrl, grid.size, 1
            )
            continuation = design @ coeffs[0].T
            base = continuation + dt[k] * data.running[:, k, :] / mass[:, None]
            if penalty_step == "explicit":
                jump = continuation - continuation[rows, marks][:, None]
                value = base[rows, marks] + n * dt[k] * np.maximum(jump, 0.0) @ lam
            else:
                value = implicit_penalty(base, lam, n * dt[k])[rows, marks]
            values[:, k] = mass * value
            if record:
                if deficient:
                    warnings_at.append(k)
                    logger.warning(f"knot {k}: rank-deficient regression, truncated pseudo-inverse used")
                models[k] = RegressionModel(
                    basis=bases[k],
                    coeffs=coeffs,
                    bucket_sizes=table[k],
                    residuals=residuals[k],
                    regression=regression,
                    rank_deficient=deficient,
                )
        return values, models, residuals, warnings_at

    values, models, residuals, warnings_at = sweep(
        _Sweep.take(batch, np.arange(batch.size), own, 1)
    )
    y0 = float(values[:, 0].mean())
    stderr = _bootstrap(sweep, batch, own, 1, replicates, seed, values[:, 0])
    logger.info(f"Penalized scheme (n={n}, {penalty_step}): y0 = {y0:.6g} (stderr {stderr:.3g})")
    return BsdeSolution(
        y0=y0,
        stderr=stderr,
        mode="penalized",
        models=models,
        values=values,
        coverage=table,
        residuals=residuals,
        knots=np.asarray(batch.tgrid.knots),
        penalty_n=int(n),
        estimator="plain",
        penalty_step=penalty_step,
        feature_map=batch.feature_map,
        quant_k=batch.quant_k,
        regression=regression,
        replicates=replicates,
        rank_warnings=sorted(warnings_at),
    )


@dataclass(slots=True)
class GreedyFilterPolicy:
    """Feedback alpha(t_k) = argmax_j of the knot-k bucket regressions at the filter features."""

    grid: ControlGrid
    solution: BsdeSolution
    spec: ProblemSpec
    tgrid: TimeGrid
    particles: int
    resample: str = "multinomial"
    clouds: Optional[CloudBatch] = None
    rng: Optional[np.random.Generator] = None

    def reset(self, size: int, rng: np.random.Generator) -> None:
        self.rng = rng
        self.clouds = init_clouds(self.spec, size, self.particles, rng)

    def act(self, k: int, t: float) -> np.ndarray:
        features = cloud_features(
            self.clouds, self.spec, self.solution.feature_map, self.solution.quant_k, seed=k
        )
        return np.argmax(self.solution.models[k].predict(features), axis=1)

    def observe(self, k: int, dw: np.ndarray, actions: np.ndarray) -> None:
        self.clouds = propagate_clouds(
            self.spec,
            self.clouds,
            dw,
            self.grid.values(actions),
            self.tgrid.knots[k],
            self.tgrid.dt[k],
            self.rng,
            self.resample,
        )


def evaluate_policy_from_solution(
    sol: BsdeSolution,
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    size: int,
    particles: int,
    seed: SeedLike,
) -> tuple[float, float]:
    """Monte Carlo gain of the greedy filter-feedback policy on fresh primal paths."""
    if len(sol.models) != tgrid.steps:
        raise ValidationError("solution and time grid have different step counts")
    policy = GreedyFilterPolicy(grid=grid, solution=sol, spec=spec, tgrid=tgrid, particles=particles)
    mean, stderr = simulate_primal_batch(spec, policy, tgrid, size, seed).estimate()
    logger.info(f"Greedy policy gain {mean:.6g} (stderr {stderr:.3g})")
    return mean, stderr


@dataclass(slots=True)
class DppCheck:
    knot: int
    continuation: float
    value: float
    stderr: float

    @property
    def gap(self) -> float:
        """value - continuation; non-negative up to Monte Carlo and regression error."""
        return self.value - self.continuation


def dpp_gap(
    sol: BsdeSolution,
    batch: ScenarioBatch,
    grid: ControlGrid,
    nu: IntensityControl,
    knot: int,
) -> DppCheck:
    """Compare E^nu[gain from t_k on] with E^nu[Y_{t_k}] by kappa-reweighting the scenarios."""
    if batch.jumps is None:
        raise ValidationError("the dynamic programming check needs Poisson-law scenarios")
    if sol.values.shape != (batch.size, batch.tgrid.steps + 1):
        raise ValidationError("solution was computed on another scenario batch")
    if not 0 <= knot <= batch.tgrid.steps:
        raise ValidationError(f"knot {knot} outside the grid")
    tgrid = batch.tgrid
    kappa_end = doleans_kappa_batch(batch.jumps, grid, nu, tgrid.horizon, tgrid, batch.observation)
    kappa_knot = doleans_kappa_batch(batch.jumps, grid, nu, tgrid.knots[knot], tgrid, batch.observation)
    tail = batch.own_running()[:, knot:] @ tgrid.dt[knot:] + batch.terminal
    lhs = kappa_end * tail
    rhs = kappa_knot * sol.values[:, knot]
    _, stderr = mean_stderr(rhs - lhs)
    return DppCheck(knot=knot, continuation=float(lhs.mean()), value=float(rhs.mean()), stderr=stderr)
