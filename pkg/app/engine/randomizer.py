# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Mark processes of the randomized problem and their measure changes.

Poisson and thinned (intensity-controlled) marked point processes, the
Doleans exponential kappa of an intensity control, the time-change
construction of a controlled process from a Poisson skeleton and the
perturbed process approximating a step control.
"""
# -------------------------------------------
import logging
import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

from app.dataclasses.paths import (
    IntensityControl,
    JumpBatch,
    JumpRecord,
    ObservationPath,
    StepControl,
)
from app.dataclasses.problem import ControlGrid, TimeGrid
from app.utils.rng import SeedLike, make_rng, open_uniforms
from app.utils.validation import (
    ConfigurationError,
    InternalError,
    ValidationError,
    require_positive,
    require_positive_int,
)

logger = logging.getLogger(__name__)

BISECTION_TOL = 1e-10

Layers = Union[IntensityControl, Sequence[IntensityControl]]


def _cumulative(probabilities: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probabilities)
    cum[-1] = 1.0
    return cum


def _draw_categorical(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cum, u, side="left"), cum.size - 1)


def _draw_rows(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``weights`` (P, J) by CDF inversion."""
    cum = np.cumsum(weights, axis=1)
    cum /= cum[:, -1:]
    return np.minimum(np.sum(cum < u[:, None], axis=1), weights.shape[1] - 1)


def _feature_lookup(observation: Optional[ObservationPath], size: int) -> Callable:
    if observation is None:
        empty = np.zeros((size, 0))
        return lambda t: empty
    return observation.at


def _initial(grid: ControlGrid, size: int, initial_marks) -> np.ndarray:
    if initial_marks is None:
        return np.full(size, grid.anchor_index, dtype=np.int64)
    initial = np.broadcast_to(np.asarray(initial_marks, dtype=np.int64), (size,)).copy()
    if np.any((initial < 0) | (initial >= grid.size)):
        raise ValidationError("initial marks must be grid indices")
    return initial


def draw_initial_marks(grid: ControlGrid, size: int, seed: SeedLike) -> np.ndarray:
    """I_0 ~ lambda / Lambda, one uniform per path."""
    rng = make_rng(seed)
    return _draw_categorical(_cumulative(grid.probabilities), open_uniforms(rng, size))


def _compact(times: list, marks: list, initial: np.ndarray, horizon: float) -> JumpBatch:
    size = initial.shape[0]
    if not times:
        return JumpBatch(
            times=np.zeros((size, 0)),
            marks=np.zeros((size, 0), dtype=np.int64),
            initial_marks=initial,
            horizon=horizon,
        )
    t = np.column_stack(times)
    m = np.column_stack(marks).astype(np.int64)
    order = np.argsort(t, axis=1, kind="stable")
    t = np.take_along_axis(t, order, axis=1)
    m = np.take_along_axis(m, order, axis=1)
    width = int(np.isfinite(t).sum(axis=1).max(initial=0))
    return JumpBatch(times=t[:, :width], marks=m[:, :width], initial_marks=initial, horizon=horizon)


def simulate_marks_poisson_batch(
    grid: ControlGrid,
    horizon: float,
    size: int,
    seed: SeedLike,
    initial_marks=None,
) -> JumpBatch:
    """Poisson random measure of intensity lambda(da) dt on (0, horizon], ``size`` paths."""
    horizon = require_positive("horizon", horizon)
    rng = make_rng(seed)
    initial = _initial(grid, size, initial_marks)
    counts = rng.poisson(grid.total_mass * horizon, size=size)
    width = int(counts.max(initial=0))
    padding = np.arange(width)[None, :] >= counts[:, None]
    times = open_uniforms(rng, (size, width)) * horizon
    times[padding] = np.inf
    times.sort(axis=1)
    marks = _draw_categorical(_cumulative(grid.probabilities), open_uniforms(rng, (size, width)))
    marks[padding] = -1
    return JumpBatch(times=times, marks=marks, initial_marks=initial, horizon=horizon)


def simulate_marks_poisson(grid: ControlGrid, horizon: float, seed: SeedLike) -> JumpRecord:
    return simulate_marks_poisson_batch(grid, horizon, 1, seed).record(0)


def simulate_marks_controlled_batch(
    grid: ControlGrid,
    horizon: float,
    nu: IntensityControl,
    size: int,
    seed: SeedLike,
    observation: Optional[ObservationPath] = None,
    initial_marks=None,
) -> JumpBatch:
    """Marks with intensity nu_t(a_j) lambda_j by thinning at rate nu_max * Lambda.

    The intensity sees the pre-jump mark and count, and the observation
    features at the proposal time.
    """
    horizon = require_positive("horizon", horizon)
    rate = nu.upper * grid.total_mass
    if not (math.isfinite(rate) and rate > 0):
        raise ValidationError(f"dominating rate must be positive and finite, got {rate}")
    rng = make_rng(seed)
    features = _feature_lookup(observation, size)
    cum = _cumulative(grid.probabilities)
    rows = np.arange(size)

    t = np.zeros(size)
    marks = _initial(grid, size, initial_marks)
    initial = marks.copy()
    counts = np.zeros(size, dtype=np.int64)
    alive = np.ones(size, dtype=bool)
    accepted_t, accepted_m = [], []
    while alive.any():
        t = t + rng.exponential(1.0 / rate, size=size)
        alive &= t <= horizon
        proposal = _draw_categorical(cum, open_uniforms(rng, size))
        u = open_uniforms(rng, size)
        at = np.minimum(t, horizon)
        values = nu.evaluate(at, features(at), marks, counts)[rows, proposal]
        accept = alive & (u * nu.upper <= values)
        accepted_t.append(np.where(accept, t, np.inf))
        accepted_m.append(np.where(accept, proposal, -1))
        marks = np.where(accept, proposal, marks)
        counts += accept
    return _compact(accepted_t, accepted_m, initial, horizon)


def simulate_marks_controlled(
    grid: ControlGrid,
    horizon: float,
    nu: IntensityControl,
    w_path: Optional[ObservationPath],
    seed: SeedLike,
) -> JumpRecord:
    batch = simulate_marks_controlled_batch(grid, horizon, nu, 1, seed, observation=w_path)
    return batch.record(0)


def _mesh(horizon: float, tgrid: Optional[TimeGrid], observation: Optional[ObservationPath]):
    if tgrid is None and observation is not None:
        tgrid = observation.tgrid
    if tgrid is None:
        return np.array([0.0, horizon])
    return np.asarray(tgrid.knots)


def doleans_kappa_batch(
    jumps: JumpBatch,
    grid: ControlGrid,
    nu: IntensityControl,
    t,
    tgrid: Optional[TimeGrid] = None,
    observation: Optional[ObservationPath] = None,
) -> np.ndarray:
    """kappa_t = exp(int_0^t sum_j (1 - nu_s(a_j)) lambda_j ds) * prod_{S_n <= t} nu_{S_n}(eta_n).

    The exponent uses the trapezoid rule on the knots refined by the jump
    times, each right endpoint taken as a left limit, so that intensities
    constant between breakpoints integrate exactly.
    """
    size = jumps.size
    t = np.broadcast_to(np.asarray(t, dtype=float), (size,))
    features = _feature_lookup(observation, size)
    lam = grid.weights
    rows = np.arange(size)

    def excess(s):
        values = nu.evaluate(s, features(s), jumps.marks_at(s), jumps.counts_at(s))
        return (1.0 - values) @ lam

    mesh = _mesh(jumps.horizon, tgrid, observation)
    points = np.concatenate([np.broadcast_to(mesh, (size, mesh.size)), jumps.times], axis=1)
    points = np.sort(np.concatenate([np.minimum(points, t[:, None]), t[:, None]], axis=1), axis=1)
    exponent = np.zeros(size)
    for c in range(points.shape[1] - 1):
        left, right = points[:, c], points[:, c + 1]
        width = right - left
        if not np.any(width > 0):
            continue
        inner = np.where(width > 0, np.nextafter(right, left), right)
        exponent += 0.5 * width * (excess(left) + excess(inner))

    for c in range(jumps.times.shape[1]):
        s = jumps.times[:, c]
        active = s <= t
        if not active.any():
            continue
        at = np.where(active, s, 0.0)
        before = jumps.initial_marks if c == 0 else jumps.marks[:, c - 1]
        before = np.where(before < 0, jumps.initial_marks, before)
        values = nu.evaluate(at, features(at), before, np.full(size, c))
        chosen = values[rows, np.maximum(jumps.marks[:, c], 0)]
        exponent += np.where(active, np.log(chosen), 0.0)
    return np.exp(exponent)


def doleans_kappa(
    record: JumpRecord,
    grid: ControlGrid,
    nu: IntensityControl,
    w_path: Optional[ObservationPath],
    t: float,
    tgrid: Optional[TimeGrid] = None,
) -> float:
    if not 0 <= t <= record.horizon:
        raise ValidationError(f"t={t} outside [0, {record.horizon}]")
    batch = JumpBatch.from_records([record])
    return float(doleans_kappa_batch(batch, grid, nu, t, tgrid=tgrid, observation=w_path)[0])


def _layer(layers: Layers, n: int) -> IntensityControl:
    if isinstance(layers, IntensityControl):
        return layers
    return layers[min(n, len(layers) - 1)]


def construct_timechange_batch(
    grid: ControlGrid,
    nu_layers: Layers,
    skeleton: JumpBatch,
    horizon: float,
    seed: SeedLike,
    tgrid: Optional[TimeGrid] = None,
    observation: Optional[ObservationPath] = None,
) -> JumpBatch:
    """Controlled marks obtained by time-changing a rate-Lambda Poisson skeleton.

    Layer ``n`` solves (1/Lambda) int_{T_{n-1}}^{T_n} sum_j nu_s(a_j) lambda_j ds
    = S_n - S_{n-1} by bisection with the state frozen at its post-(n-1) value,
    then draws the mark from the weights nu(a_j) lambda_j at T_n.
    """
    horizon = require_positive("horizon", horizon)
    layers = [nu_layers] if isinstance(nu_layers, IntensityControl) else list(nu_layers)
    upper = max(layer.upper for layer in layers)
    if skeleton.horizon < upper * horizon * (1 - 1e-12):
        raise ConfigurationError(
            f"skeleton horizon {skeleton.horizon} must cover nu_max * T = {upper * horizon}"
        )
    rng = make_rng(seed)
    size = skeleton.size
    features = _feature_lookup(observation, size)
    lam, total = grid.weights, grid.total_mass
    rows = np.arange(size)
    mesh = _mesh(horizon, tgrid, observation)
    mesh = mesh[mesh < horizon]
    mesh = np.append(mesh, horizon)

    start = np.zeros(size)
    previous = np.zeros(size)
    marks = skeleton.initial_marks.copy()
    active = np.ones(size, dtype=bool)
    out_t, out_m = [], []
    for n in range(skeleton.times.shape[1]):
        nu = _layer(nu_layers, n)
        target = skeleton.times[:, n]
        active &= np.isfinite(target)
        if not active.any():
            break
        gap = np.where(active, target - previous, 0.0)
        counts = np.full(size, n)

        def rate(s):
            return nu.evaluate(s, features(s), marks, counts) @ lam / total

        points = np.maximum(mesh[None, :], start[:, None])
        left, right = points[:, :-1], points[:, 1:]
        width = right - left
        r0 = np.empty_like(left)
        r1 = np.empty_like(left)
        for c in range(left.shape[1]):
            inner = np.where(width[:, c] > 0, np.nextafter(right[:, c], left[:, c]), right[:, c])
            r0[:, c] = rate(left[:, c])
            r1[:, c] = rate(inner)
        cumulative = np.concatenate(
            [np.zeros((size, 1)), np.cumsum(0.5 * width * (r0 + r1), axis=1)], axis=1
        )

        def integral(tau):
            idx = np.clip(np.sum(left <= tau[:, None], axis=1) - 1, 0, left.shape[1] - 1)
            delta = tau - left[rows, idx]
            w = width[rows, idx]
            a, b = r0[rows, idx], r1[rows, idx]
            slope = np.where(w > 0, (b - a) / np.where(w > 0, w, 1.0), 0.0)
            return cumulative[rows, idx] + a * delta + 0.5 * slope * delta**2

        active &= cumulative[:, -1] >= gap
        if not active.any():
            break
        lo = np.where(active, start + gap / nu.upper, start)
        hi = np.where(active, np.minimum(start + gap / nu.lower, horizon), start)
        lo = np.minimum(lo, hi)
        slack = 1e-9 * np.maximum(1.0, gap)
        if np.any(active & ((integral(lo) > gap + slack) | (integral(hi) < gap - slack))):
            raise InternalError(
                "time-change root is not bracketed",
                {"layer": n, "lo": lo[active].tolist()[:5], "hi": hi[active].tolist()[:5]},
            )
        spread = float(np.max(hi - lo, initial=0.0))
        iterations = max(0, math.ceil(math.log2(spread / BISECTION_TOL))) if spread > 0 else 0
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = integral(mid) < gap
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        tau = 0.5 * (lo + hi)

        weights = nu.evaluate(tau, features(tau), marks, counts) * lam
        new = _draw_rows(weights, open_uniforms(rng, size))
        out_t.append(np.where(active, tau, np.inf))
        out_m.append(np.where(active, new, -1))
        marks = np.where(active, new, marks)
        start = np.where(active, tau, start)
        previous = np.where(active, target, previous)
    return _compact(out_t, out_m, skeleton.initial_marks.copy(), horizon)


def construct_timechange_process(
    grid: ControlGrid,
    nu_layers: Layers,
    skeleton: JumpRecord,
    w_path: Optional[ObservationPath],
    horizon: float,
    seed: SeedLike,
    tgrid: Optional[TimeGrid] = None,
) -> JumpRecord:
    batch = construct_timechange_batch(
        grid,
        nu_layers,
        JumpBatch.from_records([skeleton]),
        horizon,
        seed,
        tgrid=tgrid,
        observation=w_path,
    )
    return batch.record(0)


def construct_perturbed_process(
    grid: ControlGrid,
    step_control: StepControl,
    m: int,
    k: int,
    horizon: float,
    seed: SeedLike,
) -> JumpRecord:
    """Marked point process shadowing ``step_control``.

    Switch ``n`` at t_n is followed by a jump at R_n = t_n + V_1 + ... + V_n
    with V_i ~ Exp(m 2^i), its mark drawn lambda-weighted from the grid
    points within rho-distance 1/m of the new control value. An independent
    Poisson measure of intensity lambda/k is superposed.
    """
    m = require_positive_int("m", m)
    k = require_positive_int("k", k)
    horizon = require_positive("horizon", horizon)
    if np.any((step_control.indices < 0) | (step_control.indices >= grid.size)):
        raise ValidationError("step control values must be grid indices")
    rng = make_rng(seed)
    switches = step_control.switch_times.size
    rates = m * 2.0 ** np.arange(1, switches + 1)
    delays = np.cumsum(rng.exponential(1.0 / rates)) if switches else np.zeros(0)
    times = step_control.switch_times + delays
    marks = np.empty(switches, dtype=np.int64)
    for n in range(switches):
        target = int(step_control.indices[n + 1])
        ball = np.flatnonzero(grid.distance(target, np.arange(grid.size)) < 1.0 / m)
        if ball.size == 0:
            raise ValidationError(f"empty neighbourhood around control {target}")
        weights = grid.weights[ball]
        u = open_uniforms(rng, 1)
        marks[n] = ball[_draw_categorical(_cumulative(weights / weights.sum()), u)[0]]
    keep = times <= horizon
    noise = simulate_marks_poisson(grid.with_total_mass(grid.total_mass / k), horizon, rng)
    all_times = np.concatenate([times[keep], noise.times])
    all_marks = np.concatenate([marks[keep], noise.marks])
    order = np.argsort(all_times, kind="stable")
    return JumpRecord(
        times=all_times[order],
        marks=all_marks[order],
        initial_mark=step_control.initial_index,
        horizon=horizon,
    )


def perturbed_compensator_bounds(
    grid: ControlGrid, m: int, k: int, switches: int
) -> tuple[float, float]:
    """Bounds on the compensator density of the perturbed process w.r.t. lambda(da) dt.

    The superposed Poisson part alone gives the lower bound 1/k.
    """
    m = require_positive_int("m", m)
    k = require_positive_int("k", k)
    upper = 1.0 / k + m * 2.0**switches / float(np.min(grid.weights))
    return 1.0 / k, upper


def integrated_mark_distance(
    record: JumpRecord, step_control: StepControl, grid: ControlGrid
) -> float:
    """int_0^T rho(I_t, alpha_t) dt, exact for piecewise-constant paths."""
    switches = step_control.switch_times
    points = np.unique(
        np.concatenate([[0.0, record.horizon], record.times, switches[switches < record.horizon]])
    )
    total = 0.0
    for left, right in zip(points[:-1], points[1:]):
        gap = grid.distance(record.mark_at(left), int(step_control.index_at(left)))
        total += float(gap) * (right - left)
    return total
