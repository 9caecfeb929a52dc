# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Euler-Maruyama simulation of the randomized pair (X, I) and of primal policies."""
# -------------------------------------------
import logging
from dataclasses import dataclass
from typing import Optional, Protocol, Union

import numpy as np

from app.dataclasses.paths import (
    IntensityControl,
    JumpRecord,
    MarkedPath,
    ObservationPath,
    PathBatch,
)
from app.dataclasses.problem import ControlGrid, ProblemSpec, TimeGrid
from app.engine.randomizer import (
    doleans_kappa_batch,
    draw_initial_marks,
    simulate_marks_controlled_batch,
    simulate_marks_poisson_batch,
)
from app.utils.parallel import DEFAULT_CHUNK, map_chunks
from app.utils.rng import SeedLike, make_rng, standard_normals
from app.utils.stats import mean_stderr
from app.utils.validation import SimulationError, ValidationError

logger = logging.getLogger(__name__)

BLOWUP = 1e8
MAX_INVALID_FRACTION = 1e-3

InitialMarks = Union[None, int, str]


@dataclass(frozen=True, slots=True)
class Measure:
    """Law of the marks: Poisson reference (optionally reweighted by ``nu``) or controlled by ``nu``."""

    kind: str = "reference"
    nu: Optional[IntensityControl] = None

    def __post_init__(self):
        if self.kind not in ("reference", "controlled"):
            raise ValidationError(f"unknown measure {self.kind!r}")
        if self.kind == "controlled" and self.nu is None:
            raise ValidationError("a controlled measure needs an intensity control")

    @classmethod
    def reference(cls, reweight: Optional[IntensityControl] = None) -> "Measure":
        return cls(kind="reference", nu=reweight)

    @classmethod
    def controlled(cls, nu: IntensityControl) -> "Measure":
        return cls(kind="controlled", nu=nu)


def euler_step(
    spec: ProblemSpec,
    t,
    x: np.ndarray,
    a: np.ndarray,
    h,
    dw: np.ndarray,
    dv: np.ndarray,
) -> np.ndarray:
    """One Euler step; the likelihood coordinate is advanced as Z exp(theta.dW - |theta|^2 h / 2)."""
    h = np.broadcast_to(np.asarray(h, dtype=float), (x.shape[0],))
    out = x + spec.drift(t, x, a) * h[:, None]
    if spec.dim_v:
        out += np.einsum("pij,pj->pi", spec.diff_v(t, x, a), dv)
    if spec.dim_w:
        out += np.einsum("pij,pj->pi", spec.diff_w(t, x, a), dw)
    if spec.likelihood is not None:
        theta = spec.likelihood.exponent(t, x, a)
        zi = spec.likelihood.index
        log_step = np.sum(theta * dw, axis=1) - 0.5 * np.sum(theta**2, axis=1) * h
        out[:, zi] = x[:, zi] * np.exp(log_step)
    return out


def bridge_split(total: np.ndarray, lengths: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Split increments ``(P, d)`` over sub-intervals ``(P, S)`` along a Brownian bridge."""
    size, pieces = lengths.shape
    out = np.zeros((size, pieces, total.shape[1]))
    remaining = total.copy()
    tau = lengths.sum(axis=1)
    for s in range(pieces - 1):
        h = lengths[:, s]
        positive = tau > 0
        safe = np.where(positive, tau, 1.0)
        frac = np.where(positive, h / safe, 0.0)
        var = np.where(positive, np.maximum(h * (tau - h) / safe, 0.0), 0.0)
        step = frac[:, None] * remaining + np.sqrt(var)[:, None] * standard_normals(
            rng, remaining.shape
        )
        out[:, s] = step
        remaining = remaining - step
        tau = tau - h
    out[:, pieces - 1] = remaining
    return out


def _screen(x, valid, first_bad, t):
    with np.errstate(invalid="ignore"):
        bad = ~(np.all(np.isfinite(x), axis=1) & np.all(np.abs(x) <= BLOWUP, axis=1))
    first_bad[bad & valid] = t
    valid &= ~bad
    x[~valid] = 0.0
    return x, valid, first_bad


def check_invalid(valid: np.ndarray, first_bad: np.ndarray, limit: float = MAX_INVALID_FRACTION):
    fraction = 1.0 - float(np.mean(valid)) if valid.size else 0.0
    if fraction > limit:
        raise SimulationError(
            f"{fraction:.3%} of paths blew up (first at t={np.nanmin(first_bad):.4g})"
        )
    if fraction > 0:
        logger.warning(f"{fraction:.3%} of paths flagged invalid and dropped")


def _resolve_initial(grid: ControlGrid, size: int, initial: InitialMarks, rng) -> Optional[np.ndarray]:
    if initial is None:
        return None
    if isinstance(initial, str):
        if initial != "random":
            raise ValidationError(f"unknown initial mark rule {initial!r}")
        return draw_initial_marks(grid, size, rng)
    return np.full(size, int(initial), dtype=np.int64)


def _simulate_chunk(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    measure: Measure,
    initial: InitialMarks,
    size: int,
    rng: np.random.Generator,
) -> PathBatch:
    steps, horizon, dt = tgrid.steps, tgrid.horizon, tgrid.dt
    knots = tgrid.knots
    n, m, d = spec.dim_x, spec.dim_v, spec.dim_w
    x = np.asarray(spec.init_sampler(rng, size), dtype=float).reshape(size, n)
    w_inc = standard_normals(rng, (size, steps, d)) * np.sqrt(dt)[None, :, None]
    v_inc = standard_normals(rng, (size, steps, m)) * np.sqrt(dt)[None, :, None]
    observation = ObservationPath.from_increments(tgrid, w_inc)
    initial_marks = _resolve_initial(grid, size, initial, rng)
    if measure.kind == "controlled":
        jumps = simulate_marks_controlled_batch(
            grid, horizon, measure.nu, size, rng, observation, initial_marks
        )
    else:
        jumps = simulate_marks_poisson_batch(grid, horizon, size, rng, initial_marks)

    xs = np.empty((size, steps + 1, n))
    xs[:, 0] = x
    i_idx = np.empty((size, steps + 1), dtype=np.int64)
    running = np.zeros(size)
    valid = np.ones(size, dtype=bool)
    first_bad = np.full(size, np.nan)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            t0, t1 = knots[k], knots[k + 1]
            i_idx[:, k] = jumps.marks_at(t0)
            running += spec.running_gain(t0, x, grid.values(i_idx[:, k])) * dt[k]
            inside = (jumps.times > t0) & (jumps.times < t1)
            width = int(inside.sum(axis=1).max(initial=0))
            if width == 0:
                a = grid.values(i_idx[:, k])
                x = euler_step(spec, t0, x, a, dt[k], w_inc[:, k], v_inc[:, k])
            else:
                cuts = np.sort(np.where(inside, jumps.times, t1), axis=1)[:, :width]
                bounds = np.concatenate(
                    [np.full((size, 1), t0), cuts, np.full((size, 1), t1)], axis=1
                )
                lengths = np.diff(bounds, axis=1)
                dws = bridge_split(w_inc[:, k], lengths, rng)
                dvs = bridge_split(v_inc[:, k], lengths, rng)
                for s in range(width + 1):
                    start = bounds[:, s]
                    a = grid.values(jumps.marks_at(start))
                    x = euler_step(spec, start, x, a, lengths[:, s], dws[:, s], dvs[:, s])
            x, valid, first_bad = _screen(x, valid, first_bad, t1)
            xs[:, k + 1] = x
    i_idx[:, steps] = jumps.marks_at(horizon)
    terminal = np.where(valid, spec.terminal_gain(x), 0.0)
    running = np.where(valid, running, 0.0)

    if measure.kind == "reference" and measure.nu is not None:
        kappa = doleans_kappa_batch(jumps, grid, measure.nu, horizon, tgrid, observation)
    else:
        kappa = np.ones(size)
    return PathBatch(
        tgrid=tgrid,
        x=xs,
        i_idx=i_idx,
        w_inc=w_inc,
        v_inc=v_inc,
        jumps=jumps,
        kappa_T=kappa,
        running=running,
        terminal=terminal,
        valid=valid,
        first_bad_time=first_bad,
    )


def simulate_randomized_batch(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    size: int,
    seed: SeedLike,
    measure: Measure = Measure(),
    initial_marks: InitialMarks = None,
    chunk: int = DEFAULT_CHUNK,
    workers: Optional[int] = None,
    max_invalid: float = MAX_INVALID_FRACTION,
) -> PathBatch:
    """Simulate ``size`` randomized paths in fixed chunks, Euler steps split at jump times."""
    if not np.isclose(tgrid.horizon, spec.horizon):
        raise ValidationError(
            f"time grid ends at {tgrid.horizon}, problem horizon is {spec.horizon}"
        )

    def job(count: int, rng: np.random.Generator) -> PathBatch:
        return _simulate_chunk(spec, grid, tgrid, measure, initial_marks, count, rng)

    batch = PathBatch.concatenate(map_chunks(job, size, seed, chunk=chunk, workers=workers))
    check_invalid(batch.valid, batch.first_bad_time, max_invalid)
    return batch


def simulate_randomized_path(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    measure: Measure,
    seed: SeedLike,
) -> MarkedPath:
    batch = simulate_randomized_batch(spec, grid, tgrid, 1, seed, measure, max_invalid=1.0)
    return batch.path(0)


class Policy(Protocol):
    """Feedback on the observation: sees W increments and its own past actions only."""

    grid: ControlGrid

    def reset(self, size: int, rng: np.random.Generator) -> None: ...

    def act(self, k: int, t: float) -> np.ndarray: ...

    def observe(self, k: int, dw: np.ndarray, actions: np.ndarray) -> None: ...


@dataclass(slots=True)
class ConstantPolicy:
    grid: ControlGrid
    index: int = 0
    size: int = 0

    def reset(self, size: int, rng: np.random.Generator) -> None:
        self.size = size

    def act(self, k: int, t: float) -> np.ndarray:
        return np.full(self.size, self.index, dtype=np.int64)

    def observe(self, k: int, dw: np.ndarray, actions: np.ndarray) -> None:
        return None


@dataclass(slots=True)
class PrimalBatch:
    tgrid: TimeGrid
    x: np.ndarray
    actions: np.ndarray
    w_inc: np.ndarray
    v_inc: np.ndarray
    running: np.ndarray
    terminal: np.ndarray
    valid: np.ndarray
    first_bad_time: np.ndarray

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    @property
    def gain(self) -> np.ndarray:
        return self.running + self.terminal

    def estimate(self) -> tuple[float, float]:
        return mean_stderr(self.gain[self.valid])

    def path(self, p: int) -> MarkedPath:
        actions = np.append(self.actions[p], self.actions[p, -1])
        bad = self.first_bad_time[p]
        return MarkedPath(
            grid=self.tgrid,
            x=self.x[p],
            i_idx=actions,
            w_inc=self.w_inc[p],
            v_inc=self.v_inc[p],
            jumps=JumpRecord(
                times=np.zeros(0),
                marks=np.zeros(0),
                initial_mark=int(actions[0]),
                horizon=self.tgrid.horizon,
            ),
            gain=float(self.gain[p]),
            valid=bool(self.valid[p]),
            first_bad_time=None if np.isnan(bad) else float(bad),
        )


def simulate_primal_batch(
    spec: ProblemSpec,
    policy: Policy,
    tgrid: TimeGrid,
    size: int,
    seed: SeedLike,
    max_invalid: float = MAX_INVALID_FRACTION,
) -> PrimalBatch:
    """Euler paths of the controlled state; gain = sum_k f(t_k, X_k, alpha_k) dt_k + g(X_T)."""
    rng = make_rng(seed)
    steps, dt, knots = tgrid.steps, tgrid.dt, tgrid.knots
    n, m, d = spec.dim_x, spec.dim_v, spec.dim_w
    grid = policy.grid
    x = np.asarray(spec.init_sampler(rng, size), dtype=float).reshape(size, n)
    w_inc = standard_normals(rng, (size, steps, d)) * np.sqrt(dt)[None, :, None]
    v_inc = standard_normals(rng, (size, steps, m)) * np.sqrt(dt)[None, :, None]
    policy.reset(size, rng)

    xs = np.empty((size, steps + 1, n))
    xs[:, 0] = x
    actions = np.empty((size, steps), dtype=np.int64)
    running = np.zeros(size)
    valid = np.ones(size, dtype=bool)
    first_bad = np.full(size, np.nan)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            chosen = np.asarray(policy.act(k, knots[k]), dtype=np.int64)
            actions[:, k] = chosen
            a = grid.values(chosen)
            running += spec.running_gain(knots[k], x, a) * dt[k]
            x = euler_step(spec, knots[k], x, a, dt[k], w_inc[:, k], v_inc[:, k])
            x, valid, first_bad = _screen(x, valid, first_bad, knots[k + 1])
            xs[:, k + 1] = x
            policy.observe(k, w_inc[:, k], chosen)
    check_invalid(valid, first_bad, max_invalid)
    return PrimalBatch(
        tgrid=tgrid,
        x=xs,
        actions=actions,
        w_inc=w_inc,
        v_inc=v_inc,
        running=np.where(valid, running, 0.0),
        terminal=np.where(valid, spec.terminal_gain(x), 0.0),
        valid=valid,
        first_bad_time=first_bad,
    )


def simulate_primal_path(
    spec: ProblemSpec, policy: Policy, tgrid: TimeGrid, seed: SeedLike
) -> tuple[MarkedPath, float]:
    batch = simulate_primal_batch(spec, policy, tgrid, 1, seed, max_invalid=1.0)
    path = batch.path(0)
    return path, path.gain
