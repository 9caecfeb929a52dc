# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Pytest tests for the reference values."""
# -------------------------------------------
import math
from dataclasses import replace

import numpy as np
import pytest

from app.dataclasses.problem import ControlGrid
from app.engine.benchmarks import bangbang1d, lqg_po, uncontrolled2d
from app.engine.forward import ConstantPolicy, simulate_primal_batch
from app.engine.model import make_uniform_grid
from app.engine.oracles import (
    KalmanFeedbackPolicy,
    LqgParams,
    hjb_lattice_value,
    hjb_validated_value,
    kalman_bucy_filter,
    lqg_kalman_value,
    plain_mc_value,
    solve_lqg_riccati,
)
from app.utils.stats import combined_stderr
from app.utils.validation import ConfigurationError, NotApplicableError, ValidationError


@pytest.fixture
def bench():
    return bangbang1d()


@pytest.fixture
def tgrid():
    return make_uniform_grid(1.0, 8)


@pytest.mark.parametrize(
    "kwargs",
    [{"k": 0.0}, {"c": 1.0, "r": 0.0}, {"v0": -1.0}, {"horizon": 0.0}],
)
def test_lqg_params_validation(kwargs):
    with pytest.raises(ValidationError):
        LqgParams(**kwargs)


def test_riccati_pure_filtering_value():
    """Without control the value is -(P(T) + int P^2) = -T."""
    solution = solve_lqg_riccati(LqgParams(c=0.0, r=0.0))
    assert solution.value == pytest.approx(-1.0, abs=1e-5)
    assert solution.filter_variance(1.0) == pytest.approx(math.tanh(1.0), abs=1e-6)
    assert np.all(solution.gain(np.linspace(0, 1, 5)) == 0.0)


def test_riccati_control_improves_value():
    controlled = solve_lqg_riccati(LqgParams())
    uncontrolled = solve_lqg_riccati(LqgParams(c=0.0, r=0.0))
    assert controlled.value > uncontrolled.value
    assert controlled.gain(0.5) < 0.0


def test_kalman_variance_follows_riccati():
    tgrid = make_uniform_grid(1.0, 256)
    means, variances = kalman_bucy_filter(LqgParams(), tgrid, np.zeros((3, 256)))
    assert means.shape == (3, 257)
    assert np.allclose(means, 0.0)
    assert variances[-1] == pytest.approx(math.tanh(1.0), abs=5e-3)


def test_lattice_without_control_choice(tgrid):
    """Only alpha = 0: X_T = W_T and the value is -T."""
    bench = bangbang1d()
    single = ControlGrid.from_values([0.0])
    assert hjb_lattice_value(bench.spec, single, tgrid) == pytest.approx(-1.0, abs=0.01)


def test_lattice_value_of_bang_bang(bench, tgrid):
    value = hjb_lattice_value(bench.spec, bench.grid, tgrid)
    assert -1.0 < value < -0.2


def test_validated_lattice_value_refines(bench, tgrid):
    validated = hjb_validated_value(bench.spec, bench.grid, tgrid, nodes=201)
    assert abs(validated.value - validated.coarse) < 0.05
    expected = abs(validated.value - validated.coarse) / abs(validated.value)
    assert validated.relative_change == pytest.approx(expected)


def test_lattice_rejects_random_start(bench, tgrid):
    noisy = replace(bench.spec, init_sampler=lambda rng, size: rng.normal(size=(size, 1)))
    with pytest.raises(NotApplicableError):
        hjb_lattice_value(noisy, bench.grid, tgrid)


def test_lattice_rejects_multidimensional_state(tgrid):
    bench = uncontrolled2d()
    with pytest.raises(NotApplicableError):
        hjb_lattice_value(bench.spec, bench.grid, tgrid)


def test_lattice_rejects_small_lattice(bench, tgrid):
    with pytest.raises(ValidationError):
        hjb_lattice_value(bench.spec, bench.grid, tgrid, nodes=3)


def test_lattice_substep_cap(bench, tgrid):
    with pytest.raises(ConfigurationError):
        hjb_lattice_value(bench.spec, bench.grid, tgrid, max_substeps=1)


def test_plain_monte_carlo_matches_primal(tgrid):
    bench = uncontrolled2d()
    value, stderr = plain_mc_value(bench.spec, bench.grid, tgrid, 20_000, seed=1)
    primal = simulate_primal_batch(
        bench.spec, ConstantPolicy(bench.grid, bench.grid.anchor_index), tgrid, 20_000, seed=2
    )
    mean, primal_stderr = primal.estimate()
    assert abs(value - mean) < 4 * combined_stderr(stderr, primal_stderr)


def test_plain_monte_carlo_needs_control_free_problem(bench, tgrid):
    with pytest.raises(NotApplicableError):
        plain_mc_value(bench.spec, bench.grid, tgrid, 100, seed=0)


def test_lqg_bracket(tgrid):
    bench = lqg_po()
    bracket = lqg_kalman_value(bench.lqg, bench.grid, tgrid, paths=20_000, seed=3)
    assert bracket.lower <= bracket.upper
    assert bracket.projected < bracket.continuous + 4 * bracket.projected_stderr + 0.02


def test_kalman_policy_on_reformulated_problem():
    """The feedback policy on the (Xbar, Z, O) system reproduces the direct simulation."""
    bench = lqg_po()
    tgrid = make_uniform_grid(bench.spec.horizon, 16)
    bracket = lqg_kalman_value(bench.lqg, bench.grid, tgrid, paths=20_000, seed=4)
    policy = KalmanFeedbackPolicy(grid=bench.grid, params=bench.lqg, tgrid=tgrid)
    mean, stderr = simulate_primal_batch(bench.spec, policy, tgrid, 20_000, seed=5).estimate()
    assert abs(mean - bracket.projected) < 4 * combined_stderr(stderr, bracket.projected_stderr) + 0.05
