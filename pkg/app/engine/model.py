# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Problem construction: time grids, probing and the reformulation builders."""
# -------------------------------------------
import logging
import math
from dataclasses import dataclass

import numpy as np

from app.dataclasses.problem import (
    ControlGrid,
    LikelihoodCoordinate,
    ProblemSpec,
    RawClassicalSpec,
    RawLatentSpec,
    TimeGrid,
)
from app.utils.rng import make_rng
from app.utils.validation import ValidationError, require_positive, require_positive_int

logger = logging.getLogger(__name__)

LIPSCHITZ_SLACK = 1.01


def make_uniform_grid(horizon: float, steps: int) -> TimeGrid:
    """Partition of [0, horizon] into ``steps`` equal intervals."""
    horizon = require_positive("horizon", horizon)
    steps = require_positive_int("steps", steps)
    knots = np.linspace(0.0, horizon, steps + 1)
    knots[-1] = horizon
    return TimeGrid(knots=knots)


@dataclass(slots=True)
class InspectionReport:
    shapes_ok: bool
    lipschitz_violations: int
    worst_ratio: float


def inspect_problem(
    spec: ProblemSpec, grid: ControlGrid, samples: int = 100, seed: int = 0
) -> InspectionReport:
    """Check returned shapes at (0, 0, a) and sample the drift's Lipschitz bound.

    Shape mismatches raise; Lipschitz violations are only logged.
    """
    n, m, d = spec.dim_x, spec.dim_v, spec.dim_w
    expected = {
        "drift": (grid.size, n),
        "diff_v": (grid.size, n, m),
        "diff_w": (grid.size, n, d),
        "running_gain": (grid.size,),
    }
    x0 = np.zeros((grid.size, n))
    for name, shape in expected.items():
        got = np.shape(getattr(spec, name)(0.0, x0, grid.points))
        if got != shape:
            raise ValidationError(f"{spec.name}.{name} returned {got}, expected {shape}")
    got = np.shape(spec.terminal_gain(x0))
    if got != (grid.size,):
        raise ValidationError(f"{spec.name}.terminal_gain returned {got}")

    rng = make_rng(seed)
    x = _unit_ball(rng, samples, n)
    y = _unit_ball(rng, samples, n)
    gap = np.max(np.abs(x - y), axis=1)
    worst = 0.0
    violations = 0
    lip = spec.growth_bounds.lipschitz
    for j in range(grid.size):
        a = np.repeat(grid.points[j : j + 1], samples, axis=0)
        diff = np.max(np.abs(spec.drift(0.0, x, a) - spec.drift(0.0, y, a)), axis=1)
        ratio = diff / np.maximum(gap, 1e-300)
        worst = max(worst, float(ratio.max()))
        violations += int(np.sum(diff > LIPSCHITZ_SLACK * lip * gap))
    if violations:
        logger.warning(
            f"{spec.name}: {violations} sample pairs exceed the declared Lipschitz "
            f"constant {lip} (worst ratio {worst:.3g})"
        )
    return InspectionReport(shapes_ok=True, lipschitz_violations=violations, worst_ratio=worst)


def depends_on_control(
    spec: ProblemSpec, grid: ControlGrid, states: int = 100, seed: int = 0
) -> bool:
    """True when any coefficient differs between grid controls at random states."""
    rng = make_rng(seed)
    x = rng.standard_normal((states, spec.dim_x))
    t = float(rng.uniform(0.0, spec.horizon))
    reference = None
    for j in range(grid.size):
        a = np.repeat(grid.points[j : j + 1], states, axis=0)
        values = [
            spec.drift(t, x, a),
            spec.diff_v(t, x, a),
            spec.diff_w(t, x, a),
            spec.running_gain(t, x, a),
        ]
        if reference is None:
            reference = values
        elif not all(np.array_equal(u, v) for u, v in zip(reference, values)):
            return True
    return False


def _unit_ball(rng: np.random.Generator, size: int, dim: int) -> np.ndarray:
    direction = rng.standard_normal((size, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.uniform(size=(size, 1)) ** (1.0 / dim)
    return direction * radius


def _check_bound(bound: float) -> float:
    if not math.isfinite(bound) or bound <= 0:
        raise ValidationError(f"k^-1 h bound must be positive and finite, got {bound}")
    return float(bound)


def _solve_k(k: np.ndarray, h: np.ndarray, bound: float) -> np.ndarray:
    theta = np.linalg.solve(k, h[..., None])[..., 0]
    return np.clip(theta, -bound, bound)


def build_classical_po_problem(raw: RawClassicalSpec) -> ProblemSpec:
    """Augmented state (Xbar, Z, O) under the reference probability.

    dO = k dW, dZ = Z k^-1 h dW, dXbar = [bbar - s2 k^-1 h] dt + s1 dV + s2 dW,
    gains Z fbar and Z gbar. k^-1 h is clamped to the declared bound.
    """
    bound = _check_bound(raw.kinv_h_bound)
    nb, m, d = raw.dim_x, raw.dim_v, raw.dim_obs
    zi = nb
    xs, os = slice(0, nb), slice(nb + 1, nb + 1 + d)
    n = nb + 1 + d
    o_init = np.zeros(d) if raw.obs_init is None else np.asarray(raw.obs_init, float)

    def theta(t, x, a):
        o = x[:, os]
        return _solve_k(raw.obs_diff(t, o), raw.obs_drift(t, x[:, xs], o, a), bound)

    def drift(t, x, a):
        xb, o = x[:, xs], x[:, os]
        out = np.zeros((x.shape[0], n))
        s2 = raw.diff_w(t, xb, o, a)
        out[:, xs] = raw.drift(t, xb, o, a) - np.einsum("pij,pj->pi", s2, theta(t, x, a))
        return out

    def diff_v(t, x, a):
        out = np.zeros((x.shape[0], n, m))
        out[:, xs, :] = raw.diff_v(t, x[:, xs], x[:, os], a)
        return out

    def diff_w(t, x, a):
        xb, o = x[:, xs], x[:, os]
        out = np.zeros((x.shape[0], n, d))
        out[:, xs, :] = raw.diff_w(t, xb, o, a)
        out[:, zi, :] = x[:, zi : zi + 1] * theta(t, x, a)
        out[:, os, :] = raw.obs_diff(t, o)
        return out

    def running_gain(t, x, a):
        return x[:, zi] * raw.running_gain(t, x[:, xs], x[:, os], a)

    def terminal_gain(x):
        return x[:, zi] * raw.terminal_gain(x[:, xs], x[:, os])

    def init_sampler(rng, size):
        out = np.empty((size, n))
        out[:, xs] = np.asarray(raw.init_sampler(rng, size)).reshape(size, nb)
        out[:, zi] = 1.0
        out[:, os] = o_init
        return out

    return ProblemSpec(
        name=raw.name,
        dim_x=n,
        dim_v=m,
        dim_w=d,
        horizon=raw.horizon,
        drift=drift,
        diff_v=diff_v,
        diff_w=diff_w,
        running_gain=running_gain,
        terminal_gain=terminal_gain,
        init_sampler=init_sampler,
        growth_bounds=raw.growth_bounds,
        likelihood=LikelihoodCoordinate(index=zi, exponent=theta),
        feature_coords=tuple(range(nb)) + tuple(range(nb + 1, n)),
    )


def build_latent_factor_problem(raw: RawLatentSpec) -> ProblemSpec:
    """Four-component state (Xbar, M, O, Z) under the reference probability."""
    bound = _check_bound(raw.kinv_h_bound)
    nb, mf, m, d = raw.dim_x, raw.dim_factor, raw.dim_v, raw.dim_obs
    xs = slice(0, nb)
    ms = slice(nb, nb + mf)
    os = slice(nb + mf, nb + mf + d)
    zi = nb + mf + d
    n = zi + 1
    o_init = np.zeros(d) if raw.obs_init is None else np.asarray(raw.obs_init, float)

    def theta(t, x, a):
        o = x[:, os]
        return _solve_k(raw.obs_diff(t, o), raw.obs_drift(t, x[:, ms], o), bound)

    def drift(t, x, a):
        xb, mm, o = x[:, xs], x[:, ms], x[:, os]
        th = theta(t, x, a)
        out = np.zeros((x.shape[0], n))
        s2 = raw.diff_w(t, xb, mm, o, a)
        g2 = raw.factor_diff_w(t, mm)
        out[:, xs] = raw.drift(t, xb, mm, o, a) - np.einsum("pij,pj->pi", s2, th)
        out[:, ms] = raw.factor_drift(t, mm) - np.einsum("pij,pj->pi", g2, th)
        return out

    def diff_v(t, x, a):
        xb, mm, o = x[:, xs], x[:, ms], x[:, os]
        out = np.zeros((x.shape[0], n, m))
        out[:, xs, :] = raw.diff_v(t, xb, mm, o, a)
        out[:, ms, :] = raw.factor_diff_v(t, mm)
        return out

    def diff_w(t, x, a):
        xb, mm, o = x[:, xs], x[:, ms], x[:, os]
        out = np.zeros((x.shape[0], n, d))
        out[:, xs, :] = raw.diff_w(t, xb, mm, o, a)
        out[:, ms, :] = raw.factor_diff_w(t, mm)
        out[:, os, :] = raw.obs_diff(t, o)
        out[:, zi, :] = x[:, zi : zi + 1] * theta(t, x, a)
        return out

    def running_gain(t, x, a):
        return x[:, zi] * raw.running_gain(t, x[:, xs], x[:, ms], x[:, os], a)

    def terminal_gain(x):
        return x[:, zi] * raw.terminal_gain(x[:, xs], x[:, ms], x[:, os])

    def init_sampler(rng, size):
        out = np.empty((size, n))
        joint = np.asarray(raw.init_sampler(rng, size)).reshape(size, nb + mf)
        out[:, : nb + mf] = joint
        out[:, os] = o_init
        out[:, zi] = 1.0
        return out

    return ProblemSpec(
        name=raw.name,
        dim_x=n,
        dim_v=m,
        dim_w=d,
        horizon=raw.horizon,
        drift=drift,
        diff_v=diff_v,
        diff_w=diff_w,
        running_gain=running_gain,
        terminal_gain=terminal_gain,
        init_sampler=init_sampler,
        growth_bounds=raw.growth_bounds,
        likelihood=LikelihoodCoordinate(index=zi, exponent=theta),
        feature_coords=tuple(range(zi)),
    )
