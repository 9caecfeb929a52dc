# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Reference values computed without the randomized machinery.

Plain Monte Carlo for control-independent problems, an explicit upwind
lattice for one-dimensional fully observed problems and the separation
principle (Kalman-Bucy filter plus control Riccati equation) for the
linear-quadratic benchmark. These loops use their own random streams and
do not call the forward, filter or backward modules.
"""
# -------------------------------------------
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from app.dataclasses.problem import ControlGrid, ProblemSpec, TimeGrid
from app.engine.model import depends_on_control
from app.utils.validation import ConfigurationError, NotApplicableError, ValidationError

logger = logging.getLogger(__name__)

CFL_MARGIN = 0.95
MAX_SUBSTEPS = 200_000
REFINEMENT_TOL = 0.01
ODE_RTOL = 1e-8
ODE_ATOL = 1e-10


def plain_mc_value(
    spec: ProblemSpec, grid: ControlGrid, tgrid: TimeGrid, paths: int, seed: int
) -> tuple[float, float]:
    """Mean and standard error of int f dt + g(X_T) with the control frozen at a0."""
    if depends_on_control(spec, grid):
        raise NotApplicableError(f"{spec.name} depends on the control; plain Monte Carlo does not apply")
    rng = np.random.default_rng(seed)
    x = np.asarray(spec.init_sampler(rng, paths), dtype=float).reshape(paths, spec.dim_x)
    a = np.repeat(grid.anchor[None, :], paths, axis=0)
    gain = np.zeros(paths)
    for t, h in zip(tgrid.knots[:-1], tgrid.dt):
        gain += spec.running_gain(t, x, a) * h
        dv = rng.standard_normal((paths, spec.dim_v)) * math.sqrt(h)
        dw = rng.standard_normal((paths, spec.dim_w)) * math.sqrt(h)
        x = (
            x
            + spec.drift(t, x, a) * h
            + np.einsum("pij,pj->pi", spec.diff_v(t, x, a), dv)
            + np.einsum("pij,pj->pi", spec.diff_w(t, x, a), dw)
        )
    gain += spec.terminal_gain(x)
    return float(gain.mean()), float(gain.std(ddof=1) / math.sqrt(paths))


def _deterministic_start(spec: ProblemSpec) -> float:
    draws = np.asarray(spec.init_sampler(np.random.default_rng(0), 16), dtype=float).ravel()
    if np.ptp(draws) > 0:
        raise NotApplicableError("the lattice oracle needs a deterministic initial state")
    return float(draws[0])


def hjb_lattice_value(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    x_max: float = 4.0,
    nodes: int = 401,
    x0: Optional[float] = None,
    max_substeps: int = MAX_SUBSTEPS,
) -> float:
    """Explicit upwind dynamic programming on [-x_max, x_max], maximum over grid controls.

    Coefficients are frozen at the left knot of each step; each step is cut
    into sub-steps satisfying tau (sigma^2/dx^2 + |b|/dx) <= 0.95. Boundary
    values are extrapolated linearly.
    """
    if spec.dim_x != 1:
        raise NotApplicableError("the lattice oracle handles one-dimensional states only")
    if nodes < 5 or x_max <= 0:
        raise ValidationError("the lattice needs at least 5 nodes and a positive half-width")
    xs = np.linspace(-x_max, x_max, nodes)[:, None]
    dx = float(xs[1, 0] - xs[0, 0])
    start = _deterministic_start(spec) if x0 is None else float(x0)
    controls = [np.repeat(grid.points[j : j + 1], nodes, axis=0) for j in range(grid.size)]
    if spec.dim_v:
        for a in controls:
            if np.any(spec.diff_v(0.0, xs, a) != 0):
                raise NotApplicableError("the lattice oracle needs a fully observed state")

    value = np.asarray(spec.terminal_gain(xs), dtype=float).copy()
    total_substeps = 0
    for k in range(tgrid.steps - 1, -1, -1):
        t, h = tgrid.knots[k], tgrid.dt[k]
        drift = [spec.drift(t, xs, a)[:, 0] for a in controls]
        var = [np.sum(spec.diff_w(t, xs, a)[:, 0, :] ** 2, axis=1) for a in controls]
        gain = [spec.running_gain(t, xs, a) for a in controls]
        speed = max(float(np.max(s / dx**2 + np.abs(b) / dx)) for b, s in zip(drift, var))
        substeps = max(1, math.ceil(h * speed / CFL_MARGIN))
        if substeps > max_substeps:
            raise ConfigurationError(
                f"step {k} needs {substeps} sub-steps for stability (cap {max_substeps})"
            )
        total_substeps += substeps
        tau = h / substeps
        for _ in range(substeps):
            up = (value[2:] - value[1:-1]) / dx
            down = (value[1:-1] - value[:-2]) / dx
            second = (value[2:] - 2 * value[1:-1] + value[:-2]) / dx**2
            best = None
            for b, s, f in zip(drift, var, gain):
                bi, si, fi = b[1:-1], s[1:-1], f[1:-1]
                update = (
                    np.maximum(bi, 0) * up + np.minimum(bi, 0) * down + 0.5 * si * second + fi
                )
                candidate = value[1:-1] + tau * update
                best = candidate if best is None else np.maximum(best, candidate)
            value[1:-1] = best
            value[0] = 2 * value[1] - value[2]
            value[-1] = 2 * value[-2] - value[-3]
    logger.debug(f"lattice oracle: {nodes} nodes, {total_substeps} sub-steps")
    return float(np.interp(start, xs[:, 0], value))


@dataclass(slots=True)
class ValidatedValue:
    value: float
    coarse: float
    relative_change: float

    @property
    def stable(self) -> bool:
        return self.relative_change < REFINEMENT_TOL


def _refine(tgrid: TimeGrid) -> TimeGrid:
    mids = 0.5 * (tgrid.knots[:-1] + tgrid.knots[1:])
    return TimeGrid(knots=np.sort(np.concatenate([tgrid.knots, mids])))


def hjb_validated_value(
    spec: ProblemSpec,
    grid: ControlGrid,
    tgrid: TimeGrid,
    x_max: float = 4.0,
    nodes: int = 401,
) -> ValidatedValue:
    """Lattice value on the given grids and on grids refined twice in space and time."""
    coarse = hjb_lattice_value(spec, grid, tgrid, x_max, nodes)
    fine = hjb_lattice_value(spec, grid, _refine(tgrid), x_max, 2 * nodes - 1)
    change = abs(fine - coarse) / max(abs(fine), 1e-12)
    if change >= REFINEMENT_TOL:
        logger.warning(f"lattice oracle moved by {change:.2%} under refinement")
    return ValidatedValue(value=fine, coarse=coarse, relative_change=change)


@dataclass(frozen=True, slots=True)
class LqgParams:
    """dX = (a X + c alpha) dt + s1 dV, dY = h X dt + k dW, X_0 ~ N(m0, v0).

    Gain -E[int (q X^2 + r alpha^2) dt + p X_T^2].
    """

    a: float = 0.0
    c: float = 1.0
    s1: float = 1.0
    h: float = 1.0
    k: float = 1.0
    q: float = 0.0
    r: float = 0.5
    p: float = 1.0
    m0: float = 0.0
    v0: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.k == 0:
            raise ValidationError("observation noise k must be non-zero")
        if self.c != 0 and self.r <= 0:
            raise ValidationError("a controlled LQG problem needs r > 0")
        if self.v0 < 0 or self.horizon <= 0:
            raise ValidationError("v0 must be >= 0 and the horizon positive")

    @property
    def feedback(self) -> float:
        """c^2 / r, zero when the control has no effect."""
        return 0.0 if self.c == 0 else self.c**2 / self.r


@dataclass(slots=True)
class RiccatiSolution:
    params: LqgParams
    covariance: object
    control: object
    value: float

    def filter_variance(self, t) -> np.ndarray:
        return self.covariance.sol(t)[0]

    def gain(self, t) -> np.ndarray:
        """Optimal feedback slope: alpha = -(c / r) S(t) m."""
        if self.params.c == 0:
            return np.zeros_like(np.asarray(t, dtype=float))
        return -(self.params.c / self.params.r) * self.control.sol(t)[0]


def solve_lqg_riccati(params: LqgParams) -> RiccatiSolution:
    """Filter covariance P' = 2aP + s1^2 - (h/k)^2 P^2 and control equation
    S' = -2aS + (c^2/r) S^2 - q, S(T) = p, with the value
    -[S(0) m0^2 + int S (P h / k)^2 dt + int q P dt + p P(T)].
    """
    a, s1, h, k, q = params.a, params.s1, params.h, params.k, params.q
    T = params.horizon
    ratio = (h / k) ** 2

    covariance = solve_ivp(
        lambda t, y: [2 * a * y[0] + s1**2 - ratio * y[0] ** 2, q * y[0]],
        (0.0, T),
        [params.v0, 0.0],
        method="RK45",
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
        dense_output=True,
    )
    if covariance.status != 0:
        logger.warning(f"filter covariance integration stopped: {covariance.message}")

    def control_rhs(t, y):
        p_t = covariance.sol(t)[0]
        return [-2 * a * y[0] + params.feedback * y[0] ** 2 - q, -y[0] * ratio * p_t**2]

    control = solve_ivp(
        control_rhs,
        (T, 0.0),
        [params.p, 0.0],
        method="RK45",
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
        dense_output=True,
    )
    if control.status != 0:
        logger.warning(f"control Riccati integration stopped (not stabilizable?): {control.message}")

    s0, noise = control.sol(0.0)
    var_T, running_var = covariance.sol(T)
    value = -(s0 * params.m0**2 + noise + running_var + params.p * var_T)
    return RiccatiSolution(params=params, covariance=covariance, control=control, value=float(value))


def kalman_bucy_filter(
    params: LqgParams,
    tgrid: TimeGrid,
    dy: np.ndarray,
    controls: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-discretized Kalman-Bucy recursion for observation increments ``dy (P, N)``."""
    dy = np.atleast_2d(dy)
    size, steps = dy.shape
    controls = np.zeros((size, steps)) if controls is None else np.atleast_2d(controls)
    a, c, s1, h, k = params.a, params.c, params.s1, params.h, params.k
    means = np.empty((size, steps + 1))
    variances = np.empty(steps + 1)
    means[:, 0], variances[0] = params.m0, params.v0
    for n, dt in enumerate(tgrid.dt):
        m, v = means[:, n], variances[n]
        means[:, n + 1] = m + (a * m + c * controls[:, n]) * dt + (v * h / k**2) * (dy[:, n] - h * m * dt)
        variances[n + 1] = v + (2 * a * v + s1**2 - (h / k) ** 2 * v**2) * dt
    return means, variances


@dataclass(slots=True)
class LqgBracket:
    continuous: float
    projected: float
    projected_stderr: float

    @property
    def lower(self) -> float:
        return min(self.continuous, self.projected)

    @property
    def upper(self) -> float:
        return max(self.continuous, self.projected)


def _nearest(grid: ControlGrid, values: np.ndarray) -> np.ndarray:
    return np.argmin(np.abs(values[:, None] - grid.points[None, :, 0]), axis=1)


def lqg_kalman_value(
    params: LqgParams,
    grid: ControlGrid,
    tgrid: TimeGrid,
    paths: int = 20_000,
    seed: int = 0,
) -> LqgBracket:
    """Continuous separation-principle value and the Monte Carlo value of its grid projection."""
    riccati = solve_lqg_riccati(params)
    rng = np.random.default_rng(seed)
    a, c, s1, h, k, q, r = params.a, params.c, params.s1, params.h, params.k, params.q, params.r
    x = params.m0 + math.sqrt(params.v0) * rng.standard_normal(paths)
    m = np.full(paths, params.m0)
    v = params.v0
    cost = np.zeros(paths)
    for t, dt in zip(tgrid.knots[:-1], tgrid.dt):
        alpha = grid.points[_nearest(grid, riccati.gain(t) * m), 0]
        cost += (q * x**2 + r * alpha**2) * dt
        dy = h * x * dt + k * math.sqrt(dt) * rng.standard_normal(paths)
        x = x + (a * x + c * alpha) * dt + s1 * math.sqrt(dt) * rng.standard_normal(paths)
        m = m + (a * m + c * alpha) * dt + (v * h / k**2) * (dy - h * m * dt)
        v = v + (2 * a * v + s1**2 - (h / k) ** 2 * v**2) * dt
    gain = -(cost + params.p * x**2)
    bracket = LqgBracket(
        continuous=riccati.value,
        projected=float(gain.mean()),
        projected_stderr=float(gain.std(ddof=1) / math.sqrt(paths)),
    )
    logger.info(
        f"LQG oracle: continuous {bracket.continuous:.6g}, grid-projected "
        f"{bracket.projected:.6g} (stderr {bracket.projected_stderr:.3g})"
    )
    return bracket


@dataclass(slots=True)
class KalmanFeedbackPolicy:
    """Certainty-equivalent feedback projected on the grid, driven by O-increments k dW."""

    grid: ControlGrid
    params: LqgParams
    tgrid: TimeGrid
    riccati: Optional[RiccatiSolution] = None
    means: Optional[np.ndarray] = None
    variance: float = 0.0

    def reset(self, size: int, rng: np.random.Generator) -> None:
        if self.riccati is None:
            self.riccati = solve_lqg_riccati(self.params)
        self.means = np.full(size, self.params.m0)
        self.variance = self.params.v0

    def act(self, k: int, t: float) -> np.ndarray:
        return _nearest(self.grid, self.riccati.gain(t) * self.means)

    def observe(self, k: int, dw: np.ndarray, actions: np.ndarray) -> None:
        p = self.params
        dt = self.tgrid.dt[k]
        dy = p.k * np.asarray(dw, dtype=float)[:, 0]
        alpha = self.grid.points[actions, 0]
        m, v = self.means, self.variance
        self.means = m + (p.a * m + p.c * alpha) * dt + (v * p.h / p.k**2) * (dy - p.h * m * dt)
        self.variance = v + (2 * p.a * v + p.s1**2 - (p.h / p.k) ** 2 * v**2) * dt
