# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Pytest tests for the Euler simulation of randomized and primal paths."""
# -------------------------------------------
from dataclasses import replace

import numpy as np
import pytest

from app.dataclasses.paths import IntensityControl, MarkedPath
from app.engine.benchmarks import bangbang1d, lqg_po
from app.engine.forward import (
    ConstantPolicy,
    Measure,
    bridge_split,
    euler_step,
    simulate_primal_batch,
    simulate_primal_path,
    simulate_randomized_batch,
    simulate_randomized_path,
)
from app.engine.model import make_uniform_grid
from app.utils.stats import mean_stderr
from app.utils.validation import SimulationError, ValidationError


@pytest.fixture
def bench():
    return bangbang1d()


@pytest.fixture
def tgrid(bench):
    return make_uniform_grid(bench.spec.horizon, 16)


def unit_intensity(size: int) -> IntensityControl:
    return IntensityControl(
        fn=lambda t, f, m, n: np.ones((np.shape(m)[0], size)), lower=1.0, upper=1.0
    )


def test_randomized_batch_shapes(bench, tgrid):
    batch = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 300, seed=1)
    assert batch.x.shape == (300, 17, 1)
    assert batch.i_idx.shape == (300, 17)
    assert batch.w_inc.shape == (300, 16, 1)
    assert batch.v_inc.shape == (300, 16, 0)
    assert np.all(batch.valid)
    assert np.all(batch.kappa_T == 1.0)


def test_marks_start_at_anchor_and_follow_jumps(bench, tgrid):
    batch = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 200, seed=2)
    assert np.all(batch.i_idx[:, 0] == bench.grid.anchor_index)
    for k in (0, 5, 16):
        assert np.array_equal(batch.i_idx[:, k], batch.jumps.marks_at(tgrid.knots[k]))


def test_random_initial_marks(bench, tgrid):
    batch = simulate_randomized_batch(
        bench.spec, bench.grid, tgrid, 3000, seed=3, initial_marks="random"
    )
    freq = np.bincount(batch.i_idx[:, 0], minlength=bench.grid.size) / 3000
    assert np.allclose(freq, bench.grid.probabilities, atol=0.04)


def test_unknown_initial_rule_is_rejected(bench, tgrid):
    with pytest.raises(ValidationError):
        simulate_randomized_batch(bench.spec, bench.grid, tgrid, 10, seed=3, initial_marks="uniform")


def test_results_do_not_depend_on_workers(bench, tgrid):
    runs = [
        simulate_randomized_batch(bench.spec, bench.grid, tgrid, 500, seed=4, chunk=64, workers=w)
        for w in (1, 3)
    ]
    assert np.array_equal(runs[0].x, runs[1].x)
    assert np.array_equal(runs[0].i_idx, runs[1].i_idx)
    assert np.array_equal(runs[0].gain, runs[1].gain)


def test_same_seed_same_paths(bench, tgrid):
    first = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 100, seed=5)
    second = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 100, seed=5)
    other = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 100, seed=6)
    assert np.array_equal(first.x, second.x)
    assert not np.array_equal(first.x, other.x)


def test_horizon_mismatch_is_rejected(bench):
    with pytest.raises(ValidationError):
        simulate_randomized_batch(bench.spec, bench.grid, make_uniform_grid(2.0, 8), 10, seed=0)


def test_blowup_raises_simulation_error(bench, tgrid):
    explosive = replace(bench.spec, drift=lambda t, x, a: 1e3 * x)
    with pytest.raises(SimulationError):
        simulate_randomized_batch(explosive, bench.grid, tgrid, 50, seed=0)


def test_unit_reweighting_keeps_kappa_at_one(bench, tgrid):
    measure = Measure.reference(unit_intensity(bench.grid.size))
    batch = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 100, seed=7, measure=measure)
    assert np.allclose(batch.kappa_T, 1.0)


def test_controlled_measure_needs_intensity():
    with pytest.raises(ValidationError):
        Measure(kind="controlled")
    with pytest.raises(ValidationError):
        Measure(kind="other")


def test_controlled_measure_jumps_faster(bench, tgrid):
    fast = IntensityControl(
        fn=lambda t, f, m, n: np.full((np.shape(m)[0], bench.grid.size), 3.0), lower=1.0, upper=3.0
    )
    reference = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 2000, seed=8)
    controlled = simulate_randomized_batch(
        bench.spec, bench.grid, tgrid, 2000, seed=8, measure=Measure.controlled(fast)
    )
    assert controlled.jumps.counts.mean() > 2.0 * reference.jumps.counts.mean()
    assert np.all(controlled.kappa_T == 1.0)


def test_single_path(bench, tgrid):
    path = simulate_randomized_path(bench.spec, bench.grid, tgrid, Measure(), seed=9)
    assert isinstance(path, MarkedPath)
    assert path.x.shape == (17, 1)
    assert path.first_bad_time is None


def test_bridge_split_preserves_totals():
    rng = np.random.default_rng(0)
    total = rng.normal(size=(20, 2))
    lengths = rng.uniform(0.01, 0.1, size=(20, 4))
    pieces = bridge_split(total, lengths, rng)
    assert pieces.shape == (20, 4, 2)
    assert np.allclose(pieces.sum(axis=1), total)


def test_euler_step_fully_observed(bench):
    x = np.array([[0.5], [-0.5]])
    a = np.array([[1.0], [-1.0]])
    dw = np.array([[0.1], [0.2]])
    out = euler_step(bench.spec, 0.0, x, a, 0.25, dw, np.zeros((2, 0)))
    assert np.allclose(out, [[0.5 + 0.25 + 0.1], [-0.5 - 0.25 + 0.2]])


def test_likelihood_coordinate_stays_positive():
    bench = lqg_po()
    tgrid = make_uniform_grid(bench.spec.horizon, 16)
    batch = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 500, seed=10)
    z = batch.x[:, :, bench.spec.likelihood.index]
    assert np.all(z > 0)
    assert np.all(z[:, 0] == 1.0)


def test_constant_policy_value(bench, tgrid):
    """alpha = 0 leaves X_T = W_T, so the gain has mean -T."""
    batch = simulate_primal_batch(bench.spec, ConstantPolicy(bench.grid, 1), tgrid, 20_000, seed=11)
    mean, stderr = batch.estimate()
    assert abs(mean + 1.0) < 4 * stderr
    assert np.all(batch.actions == 1)


def test_primal_path(bench, tgrid):
    path, gain = simulate_primal_path(bench.spec, ConstantPolicy(bench.grid, 2), tgrid, seed=12)
    assert path.x.shape == (17, 1)
    assert np.all(path.i_idx == 2)
    assert gain == pytest.approx(-path.x[-1, 0] ** 2)


def test_randomized_gain_is_below_best_constant(bench, tgrid):
    batch = simulate_randomized_batch(bench.spec, bench.grid, tgrid, 20_000, seed=13)
    mean, stderr = mean_stderr(batch.gain)
    assert mean < -1.0 + 4 * stderr


def test_mark_driven_drift_is_integrated_exactly(bench):
    """b = a, sigma = 0: X_T is the exact time integral of the mark, whatever the step."""
    frozen = replace(bench.spec, diff_w=lambda t, x, a: np.zeros((x.shape[0], 1, 1)))
    tgrid = make_uniform_grid(1.0, 2)
    batch = simulate_randomized_batch(frozen, bench.grid, tgrid, 300, seed=14)
    for p in range(batch.size):
        record = batch.jumps.record(p)
        bounds = np.concatenate([[0.0], record.times, [1.0]])
        marks = np.concatenate([[record.initial_mark], record.marks])
        exact = np.sum(bench.grid.points[marks, 0] * np.diff(bounds))
        assert batch.x[p, -1, 0] == pytest.approx(exact, abs=1e-12)


def test_mark_driven_law_does_not_depend_on_step(bench):
    coarse = simulate_randomized_batch(bench.spec, bench.grid, make_uniform_grid(1.0, 2), 20_000, seed=15)
    fine = simulate_randomized_batch(bench.spec, bench.grid, make_uniform_grid(1.0, 32), 20_000, seed=16)
    for moment in (1, 2):
        m1, s1 = mean_stderr(coarse.x[:, -1, 0] ** moment)
        m2, s2 = mean_stderr(fine.x[:, -1, 0] ** moment)
        assert abs(m1 - m2) < 4 * np.hypot(s1, s2)


def test_halving_the_step_shrinks_the_discretization_gap(bench):
    """Mean-reverting drift: Euler gains at dt, dt/2, dt/4 approach each other."""
    spec = replace(
        bench.spec,
        drift=lambda t, x, a: a - 2.0 * x,
        init_sampler=lambda rng, size: np.ones((size, 1)),
    )
    gains = []
    for steps in (2, 4, 8, 16):
        batch = simulate_primal_batch(
            spec, ConstantPolicy(bench.grid, 1), make_uniform_grid(1.0, steps), 40_000, seed=steps
        )
        gains.append(batch.estimate()[0])
    gaps = np.abs(np.diff(gains))
    assert gaps[0] > gaps[1] > gaps[2]
