# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Named benchmark problems selectable from configuration."""
# -------------------------------------------
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.dataclasses.problem import (
    ControlGrid,
    GrowthBounds,
    ProblemSpec,
    RawClassicalSpec,
    RawLatentSpec,
)
from app.engine.model import build_classical_po_problem, build_latent_factor_problem
from app.engine.oracles import LqgParams
from app.utils.validation import ValidationError

# Hinge knots per feature for value functions with kinks (dead zones of bang-bang control).
HINGE_KNOTS = 5


@dataclass(slots=True)
class Benchmark:
    name: str
    spec: ProblemSpec
    grid: ControlGrid
    oracle: str = "none"
    steps: int = 32
    particles: int = 1
    knots: int = 0
    lqg: Optional[LqgParams] = None
    reference_value: Optional[float] = None
    description: str = ""


def _constant(size: int, shape: tuple[int, ...], value: float) -> np.ndarray:
    return np.full((size, *shape), value)


def bangbang1d(horizon: float = 1.0, x0: float = 0.0) -> Benchmark:
    """dX = alpha dt + dW, alpha in {-1, 0, 1}, gain -X_T^2, fully observed."""
    spec = ProblemSpec(
        name="bangbang1d",
        dim_x=1,
        dim_v=0,
        dim_w=1,
        horizon=horizon,
        drift=lambda t, x, a: a[:, :1].astype(float),
        diff_v=lambda t, x, a: np.zeros((x.shape[0], 1, 0)),
        diff_w=lambda t, x, a: np.ones((x.shape[0], 1, 1)),
        running_gain=lambda t, x, a: np.zeros(x.shape[0]),
        terminal_gain=lambda x: -x[:, 0] ** 2,
        init_sampler=lambda rng, size: np.full((size, 1), x0),
        growth_bounds=GrowthBounds(lipschitz=1.0, growth=1.0, power=2.0),
    )
    grid = ControlGrid.from_values([-1.0, 0.0, 1.0], anchor=1)
    return Benchmark(
        name="bangbang1d",
        spec=spec,
        grid=grid,
        oracle="hjb",
        steps=32,
        particles=1,
        knots=HINGE_KNOTS,
        description="1-D bang-bang control of a Brownian particle, lattice oracle",
    )


def _lqg_raw(params: LqgParams, bound: float, name: str) -> RawClassicalSpec:
    p = params

    def init(rng, size):
        return p.m0 + math.sqrt(p.v0) * rng.standard_normal((size, 1))

    return RawClassicalSpec(
        dim_x=1,
        dim_v=1,
        dim_obs=1,
        horizon=p.horizon,
        drift=lambda t, xb, o, a: p.a * xb + p.c * a[:, :1],
        obs_drift=lambda t, xb, o, a: p.h * xb,
        diff_v=lambda t, xb, o, a: _constant(xb.shape[0], (1, 1), p.s1),
        diff_w=lambda t, xb, o, a: np.zeros((xb.shape[0], 1, 1)),
        obs_diff=lambda t, o: _constant(o.shape[0], (1, 1), p.k),
        running_gain=lambda t, xb, o, a: -(p.q * xb[:, 0] ** 2 + p.r * a[:, 0] ** 2),
        terminal_gain=lambda xb, o: -p.p * xb[:, 0] ** 2,
        init_sampler=init,
        kinv_h_bound=bound,
        growth_bounds=GrowthBounds(lipschitz=max(abs(p.a), 1.0), growth=1.0, power=2.0),
        name=name,
    )


def lqg_po(params: Optional[LqgParams] = None, controls: int = 13, bound: float = 10.0) -> Benchmark:
    """Scalar partially observed LQG problem in the (Xbar, Z, O) reformulation."""
    params = params or LqgParams()
    spec = build_classical_po_problem(_lqg_raw(params, bound, "lqg_po"))
    grid = ControlGrid.from_values(np.linspace(-3.0, 3.0, controls), anchor=controls // 2)
    return Benchmark(
        name="lqg_po",
        spec=spec,
        grid=grid,
        oracle="lqg",
        steps=32,
        particles=200,
        lqg=params,
        description="partially observed linear-quadratic problem, Kalman-Riccati oracle",
    )


def lqg_filtering(bound: float = 10.0) -> Benchmark:
    """LQG dynamics without control influence or control cost."""
    params = LqgParams(c=0.0, r=0.0)
    spec = build_classical_po_problem(_lqg_raw(params, bound, "lqg_filtering"))
    grid = ControlGrid.from_values([-1.0, 1.0], anchor=0)
    return Benchmark(
        name="lqg_filtering",
        spec=spec,
        grid=grid,
        oracle="lqg",
        steps=32,
        particles=200,
        lqg=params,
        description="pure filtering: value -p E[X_T^2]",
    )


def uncontrolled2d(horizon: float = 1.0) -> Benchmark:
    """Two-dimensional Ornstein-Uhlenbeck state, gains ignoring the control."""
    sigma_w = np.array([[0.3], [0.2]])

    def init(rng, size):
        return np.array([0.5, -0.5]) + 0.1 * rng.standard_normal((size, 2))

    spec = ProblemSpec(
        name="uncontrolled2d",
        dim_x=2,
        dim_v=2,
        dim_w=1,
        horizon=horizon,
        drift=lambda t, x, a: -0.5 * x,
        diff_v=lambda t, x, a: np.broadcast_to(0.4 * np.eye(2), (x.shape[0], 2, 2)).copy(),
        diff_w=lambda t, x, a: np.broadcast_to(sigma_w, (x.shape[0], 2, 1)).copy(),
        running_gain=lambda t, x, a: -0.5 * np.sum(x**2, axis=1),
        terminal_gain=lambda x: np.cos(x[:, 0]) + 0.5 * x[:, 1],
        init_sampler=init,
        growth_bounds=GrowthBounds(lipschitz=0.5, growth=1.0, power=2.0),
    )
    grid = ControlGrid.from_values([-1.0, 1.0], anchor=0)
    return Benchmark(
        name="uncontrolled2d",
        spec=spec,
        grid=grid,
        oracle="plain",
        steps=16,
        particles=32,
        description="control-independent 2-D problem, plain Monte Carlo oracle",
    )


@dataclass(frozen=True, slots=True)
class PortfolioParams:
    rate: float = 0.02
    sigma: float = 0.2
    reversion: float = 1.0
    mean: float = 0.05
    factor_vol: float = 0.1
    factor_spread: float = 0.02
    horizon: float = 1.0


def portfolio_raw(params: PortfolioParams, bound: float = 50.0, name: str = "latent_portfolio") -> RawLatentSpec:
    """Wealth under a fraction ``a`` in a stock whose return M is unobserved.

    Observation O = log price, h = M - sigma^2/2, k = sigma; utility log X_T.
    """
    p = params

    def init(rng, size):
        factor = p.mean + p.factor_spread * rng.standard_normal(size)
        return np.column_stack([np.ones(size), factor])

    return RawLatentSpec(
        dim_x=1,
        dim_factor=1,
        dim_v=1,
        dim_obs=1,
        horizon=p.horizon,
        drift=lambda t, xb, m, o, a: xb * (p.rate + a[:, :1] * (m - p.rate)),
        diff_v=lambda t, xb, m, o, a: np.zeros((xb.shape[0], 1, 1)),
        diff_w=lambda t, xb, m, o, a: (xb * a[:, :1] * p.sigma)[:, :, None],
        factor_drift=lambda t, m: p.reversion * (p.mean - m),
        factor_diff_v=lambda t, m: _constant(m.shape[0], (1, 1), p.factor_vol),
        factor_diff_w=lambda t, m: np.zeros((m.shape[0], 1, 1)),
        obs_drift=lambda t, m, o: m - 0.5 * p.sigma**2,
        obs_diff=lambda t, o: _constant(o.shape[0], (1, 1), p.sigma),
        running_gain=lambda t, xb, m, o, a: np.zeros(xb.shape[0]),
        terminal_gain=lambda xb, m, o: np.log(np.maximum(xb[:, 0], 1e-300)),
        init_sampler=init,
        kinv_h_bound=bound,
        growth_bounds=GrowthBounds(lipschitz=1.0, growth=1.0, power=2.0),
        name=name,
    )


def latent_portfolio(params: Optional[PortfolioParams] = None) -> Benchmark:
    params = params or PortfolioParams()
    spec = build_latent_factor_problem(portfolio_raw(params))
    return Benchmark(
        name="latent_portfolio",
        spec=spec,
        grid=ControlGrid.from_values([0.0, 0.5, 1.0], anchor=0),
        oracle="none",
        steps=16,
        particles=200,
        description="log-utility investment with an unobserved Ornstein-Uhlenbeck return",
    )


def latent_frozen(params: Optional[PortfolioParams] = None) -> Benchmark:
    """Portfolio with a constant, known return: value T max_a (r + a(M - r) - a^2 sigma^2 / 2)."""
    base = params or PortfolioParams()
    params = PortfolioParams(
        rate=base.rate,
        sigma=base.sigma,
        reversion=0.0,
        mean=base.mean,
        factor_vol=0.0,
        factor_spread=0.0,
        horizon=base.horizon,
    )
    grid = ControlGrid.from_values([0.0, 0.5, 1.0], anchor=0)
    a = grid.points[:, 0]
    growth = params.rate + a * (params.mean - params.rate) - 0.5 * a**2 * params.sigma**2
    spec = build_latent_factor_problem(portfolio_raw(params, name="latent_frozen"))
    return Benchmark(
        name="latent_frozen",
        spec=spec,
        grid=grid,
        oracle="closed_form",
        steps=16,
        particles=50,
        reference_value=float(params.horizon * growth.max()),
        description="portfolio with a frozen factor, closed-form log-utility value",
    )


benchmark_registry: dict[str, Callable[[], Benchmark]] = {
    "bangbang1d": bangbang1d,
    "lqg_po": lqg_po,
    "lqg_filtering": lqg_filtering,
    "uncontrolled2d": uncontrolled2d,
    "latent_portfolio": latent_portfolio,
    "latent_frozen": latent_frozen,
}


def get_benchmark(name: str) -> Benchmark:
    try:
        factory = benchmark_registry[name]
    except KeyError:
        known = ", ".join(sorted(benchmark_registry))
        raise ValidationError(f"unknown problem {name!r}; known problems: {known}") from None
    return factory()
