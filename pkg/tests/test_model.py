# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Pytest tests for problem data, grids and the reformulation builders."""
# -------------------------------------------
from dataclasses import replace

import numpy as np
import pytest

from app.dataclasses.problem import ControlGrid, RawClassicalSpec, RawLatentSpec, TimeGrid
from app.engine.benchmarks import (
    PortfolioParams,
    bangbang1d,
    latent_portfolio,
    lqg_po,
    portfolio_raw,
    uncontrolled2d,
)
from app.engine.forward import euler_step, simulate_randomized_batch
from app.engine.model import (
    build_classical_po_problem,
    build_latent_factor_problem,
    depends_on_control,
    make_uniform_grid,
    inspect_problem,
)
from app.utils.stats import mean_stderr
from app.utils.validation import ValidationError


@pytest.fixture
def grid():
    return ControlGrid.from_values([-1.0, 0.0, 1.0], weights=[1.0, 2.0, 1.0], anchor=1)


def _silent_raw(bound: float = 10.0, h_scale: float = 0.0) -> RawClassicalSpec:
    """Scalar classical problem whose observation drift is ``h_scale * xbar``."""
    return RawClassicalSpec(
        dim_x=1,
        dim_v=1,
        dim_obs=1,
        horizon=1.0,
        drift=lambda t, xb, o, a: a[:, :1] + 0.0 * xb,
        obs_drift=lambda t, xb, o, a: h_scale * xb,
        diff_v=lambda t, xb, o, a: np.ones((xb.shape[0], 1, 1)),
        diff_w=lambda t, xb, o, a: np.zeros((xb.shape[0], 1, 1)),
        obs_diff=lambda t, o: np.ones((o.shape[0], 1, 1)),
        running_gain=lambda t, xb, o, a: np.zeros(xb.shape[0]),
        terminal_gain=lambda xb, o: -xb[:, 0] ** 2,
        init_sampler=lambda rng, size: np.ones((size, 1)),
        kinv_h_bound=bound,
    )


def test_uniform_grid_partitions_horizon():
    tgrid = make_uniform_grid(2.0, 8)
    assert tgrid.steps == 8
    assert tgrid.horizon == 2.0
    assert np.allclose(tgrid.dt, 0.25)


@pytest.mark.parametrize("horizon,steps", [(0.0, 4), (1.0, 0), (-1.0, 3)])
def test_uniform_grid_rejects_bad_arguments(horizon, steps):
    with pytest.raises(ValidationError):
        make_uniform_grid(horizon, steps)


def test_time_grid_rejects_unsorted_knots():
    with pytest.raises(ValidationError):
        TimeGrid(knots=np.array([0.0, 0.5, 0.4, 1.0]))


def test_index_at_keeps_horizon_in_last_step():
    tgrid = make_uniform_grid(1.0, 4)
    assert tgrid.index_at(0.0) == 0
    assert tgrid.index_at(0.25) == 1
    assert tgrid.index_at(1.0) == 3


def test_control_grid_mass_and_probabilities(grid):
    assert grid.total_mass == 4.0
    assert np.allclose(grid.probabilities, [0.25, 0.5, 0.25])
    assert np.allclose(grid.anchor, [0.0])


def test_with_total_mass_keeps_proportions(grid):
    scaled = grid.with_total_mass(8.0)
    assert scaled.total_mass == pytest.approx(8.0)
    assert np.allclose(scaled.probabilities, grid.probabilities)
    assert scaled.anchor_index == grid.anchor_index


@pytest.mark.parametrize("weights", [[1.0, 0.0, 1.0], [1.0, -1.0, 1.0], [1.0, np.inf, 1.0], [1.0, 1.0]])
def test_control_grid_rejects_bad_weights(weights):
    with pytest.raises(ValidationError):
        ControlGrid.from_values([-1.0, 0.0, 1.0], weights=weights)


def test_grid_distance_is_bounded(grid):
    d = grid.distance(0, np.arange(grid.size))
    assert d[0] == 0.0
    assert np.all(d < 1.0)
    assert d[2] == pytest.approx(2.0 / 3.0)
    assert np.array_equal(grid.nearest_index(np.array([-0.9, 0.2, 5.0])), [0, 1, 2])


def test_inspection_accepts_benchmark():
    bench = bangbang1d()
    report = inspect_problem(bench.spec, bench.grid)
    assert report.shapes_ok
    assert report.lipschitz_violations == 0


def test_inspection_rejects_wrong_drift_shape():
    bench = bangbang1d()
    broken = replace(bench.spec, drift=lambda t, x, a: np.zeros(x.shape[0]))
    with pytest.raises(ValidationError):
        inspect_problem(broken, bench.grid)


def test_inspection_counts_lipschitz_violations():
    bench = bangbang1d()
    steep = replace(bench.spec, drift=lambda t, x, a: 10.0 * x)
    report = inspect_problem(steep, bench.grid)
    assert report.lipschitz_violations > 0
    assert report.worst_ratio == pytest.approx(10.0)


def test_depends_on_control():
    assert depends_on_control(bangbang1d().spec, bangbang1d().grid)
    bench = uncontrolled2d()
    assert not depends_on_control(bench.spec, bench.grid)


def test_classical_builder_layout():
    spec = lqg_po().spec
    assert spec.dim_x == 3
    assert spec.likelihood.index == 1
    assert spec.observed_coords == (0, 2)
    x0 = spec.init_sampler(np.random.default_rng(0), 5)
    assert np.all(x0[:, 1] == 1.0)
    assert np.all(x0[:, 2] == 0.0)


def test_zero_observation_drift_keeps_density_at_one():
    spec = build_classical_po_problem(_silent_raw(h_scale=0.0))
    rng = np.random.default_rng(1)
    x = spec.init_sampler(rng, 50)
    a = np.ones((50, 1))
    for _ in range(10):
        x = euler_step(spec, 0.0, x, a, 0.1, rng.normal(size=(50, 1)), rng.normal(size=(50, 1)))
    assert np.all(x[:, 1] == 1.0)


def test_likelihood_exponent_is_clamped():
    spec = build_classical_po_problem(_silent_raw(bound=2.0, h_scale=100.0))
    x = np.array([[1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]])
    theta = spec.likelihood.exponent(0.0, x, np.zeros((2, 1)))
    assert np.allclose(theta[:, 0], [2.0, -2.0])


def test_classical_builder_rejects_bad_bound():
    with pytest.raises(ValidationError):
        build_classical_po_problem(_silent_raw(bound=0.0))


def test_classical_gains_carry_density():
    spec = build_classical_po_problem(_silent_raw())
    x = np.array([[2.0, 0.5, 0.0]])
    assert spec.terminal_gain(x)[0] == pytest.approx(-2.0)


def test_latent_builder_layout():
    spec = latent_portfolio().spec
    assert spec.dim_x == 4
    assert spec.likelihood.index == 3
    assert spec.observed_coords == (0, 1, 2)
    x0 = spec.init_sampler(np.random.default_rng(2), 10)
    assert np.all(x0[:, 0] == 1.0)
    assert np.all(x0[:, 3] == 1.0)


def test_latent_builder_rejects_bad_bound():
    with pytest.raises(ValidationError):
        build_latent_factor_problem(portfolio_raw(PortfolioParams(), bound=np.inf))


FROZEN_FACTOR = 0.4


def _frozen_latent_raw() -> RawLatentSpec:
    """Latent model whose factor neither moves nor feeds back into the state."""
    return RawLatentSpec(
        dim_x=1,
        dim_factor=1,
        dim_v=1,
        dim_obs=1,
        horizon=1.0,
        drift=lambda t, xb, m, o, a: a[:, :1] - xb,
        diff_v=lambda t, xb, m, o, a: np.full((xb.shape[0], 1, 1), 0.3),
        diff_w=lambda t, xb, m, o, a: np.full((xb.shape[0], 1, 1), 0.2),
        factor_drift=lambda t, m: np.zeros_like(m),
        factor_diff_v=lambda t, m: np.zeros((m.shape[0], 1, 1)),
        factor_diff_w=lambda t, m: np.zeros((m.shape[0], 1, 1)),
        obs_drift=lambda t, m, o: 0.5 * m,
        obs_diff=lambda t, o: np.ones((o.shape[0], 1, 1)),
        running_gain=lambda t, xb, m, o, a: -xb[:, 0] ** 2 - a[:, 0] ** 2,
        terminal_gain=lambda xb, m, o: np.cos(xb[:, 0]) + o[:, 0],
        init_sampler=lambda rng, size: np.column_stack([np.zeros(size), np.full(size, FROZEN_FACTOR)]),
        kinv_h_bound=10.0,
    )


def _frozen_classical_raw() -> RawClassicalSpec:
    return RawClassicalSpec(
        dim_x=1,
        dim_v=1,
        dim_obs=1,
        horizon=1.0,
        drift=lambda t, xb, o, a: a[:, :1] - xb,
        obs_drift=lambda t, xb, o, a: np.full((xb.shape[0], 1), 0.5 * FROZEN_FACTOR),
        diff_v=lambda t, xb, o, a: np.full((xb.shape[0], 1, 1), 0.3),
        diff_w=lambda t, xb, o, a: np.full((xb.shape[0], 1, 1), 0.2),
        obs_diff=lambda t, o: np.ones((o.shape[0], 1, 1)),
        running_gain=lambda t, xb, o, a: -xb[:, 0] ** 2 - a[:, 0] ** 2,
        terminal_gain=lambda xb, o: np.cos(xb[:, 0]) + o[:, 0],
        init_sampler=lambda rng, size: np.zeros((size, 1)),
        kinv_h_bound=10.0,
    )


def _states(size: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    xb = rng.normal(size=(size, 1))
    z = rng.uniform(0.2, 3.0, size=(size, 1))
    o = rng.normal(size=(size, 1))
    a = rng.choice([-1.0, 0.0, 1.0], size=(size, 1))
    return np.hstack([xb, z, o]), np.hstack([xb, np.full((size, 1), FROZEN_FACTOR), o, z]), a


def test_frozen_latent_builder_reduces_to_classical():
    classical = build_classical_po_problem(_frozen_classical_raw())
    latent = build_latent_factor_problem(_frozen_latent_raw())
    x_c, x_l, a = _states(50, seed=3)
    # (Xbar, O, Z) positions in each layout
    c_idx, l_idx = [0, 2, 1], [0, 2, 3]
    for name in ("drift", "diff_v", "diff_w"):
        out_c = getattr(classical, name)(0.3, x_c, a)
        out_l = getattr(latent, name)(0.3, x_l, a)
        assert np.allclose(out_c[:, c_idx], out_l[:, l_idx]), name
        assert np.all(out_l[:, 1] == 0.0), name
    assert np.allclose(classical.running_gain(0.3, x_c, a), latent.running_gain(0.3, x_l, a))
    assert np.allclose(classical.terminal_gain(x_c), latent.terminal_gain(x_l))
    assert np.allclose(
        classical.likelihood.exponent(0.3, x_c, a), latent.likelihood.exponent(0.3, x_l, a)
    )


@pytest.mark.parametrize(
    "builder,raw",
    [
        (build_classical_po_problem, _frozen_classical_raw),
        (build_latent_factor_problem, lambda: portfolio_raw(PortfolioParams())),
    ],
)
def test_builders_are_deterministic(builder, raw):
    first, second = builder(raw()), builder(raw())
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1000, first.dim_x))
    x[:, first.likelihood.index] = rng.uniform(0.2, 3.0, size=1000)
    a = rng.choice([0.0, 0.5, 1.0], size=(1000, 1))
    t = rng.uniform(0.0, 1.0)
    for name in ("drift", "diff_v", "diff_w", "running_gain"):
        assert np.array_equal(getattr(first, name)(t, x, a), getattr(second, name)(t, x, a)), name
    assert np.array_equal(first.terminal_gain(x), second.terminal_gain(x))


def test_unit_terminal_gain_has_unit_expectation():
    """With no running gain and unit terminal gain the value is E[Z_T] = 1 for any control."""
    raw = replace(
        portfolio_raw(PortfolioParams()),
        running_gain=lambda t, xb, m, o, a: np.zeros(xb.shape[0]),
        terminal_gain=lambda xb, m, o: np.ones(xb.shape[0]),
    )
    spec = build_latent_factor_problem(raw)
    grid = ControlGrid.from_values([0.0, 0.5, 1.0])
    batch = simulate_randomized_batch(spec, grid, make_uniform_grid(1.0, 16), 20_000, seed=6)
    mean, stderr = mean_stderr(batch.gain)
    assert abs(mean - 1.0) < 4 * stderr
