# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Pytest tests for mark processes, Doleans densities and the constructions."""
# -------------------------------------------
import math

import numpy as np
import pytest

from app.dataclasses.paths import IntensityControl, JumpBatch, JumpRecord, StepControl
from app.dataclasses.problem import ControlGrid
from app.engine.experiment import check_timechange_law
from app.engine.randomizer import (
    construct_perturbed_process,
    construct_timechange_batch,
    construct_timechange_process,
    doleans_kappa,
    doleans_kappa_batch,
    draw_initial_marks,
    integrated_mark_distance,
    perturbed_compensator_bounds,
    simulate_marks_controlled,
    simulate_marks_controlled_batch,
    simulate_marks_poisson,
    simulate_marks_poisson_batch,
)
from app.utils.stats import mean_stderr
from app.utils.validation import ConfigurationError, NumericError, ValidationError


@pytest.fixture
def grid():
    return ControlGrid.from_values([-1.0, 0.0, 1.0], weights=[0.5, 1.0, 1.5], anchor=1)


def constant(grid: ControlGrid, c: float) -> IntensityControl:
    return IntensityControl(
        fn=lambda t, f, m, n: np.full((np.shape(m)[0], grid.size), c),
        lower=min(c, 1.0),
        upper=max(c, 1.0),
        name=f"const{c}",
    )


def mark_dependent(grid: ControlGrid) -> IntensityControl:
    """Intensity favouring a move away from the current mark."""

    def fn(t, features, marks, counts):
        values = np.full((np.shape(marks)[0], grid.size), 2.0)
        values[np.arange(values.shape[0]), marks] = 0.5
        return values

    return IntensityControl(fn=fn, lower=0.5, upper=2.0, name="away")


def test_jump_record_rejects_unsorted_times():
    with pytest.raises(ValidationError):
        JumpRecord(times=[0.5, 0.2], marks=[0, 1], initial_mark=0, horizon=1.0)
    with pytest.raises(ValidationError):
        JumpRecord(times=[0.5, 1.5], marks=[0, 1], initial_mark=0, horizon=1.0)


def test_jump_record_mark_at():
    record = JumpRecord(times=[0.2, 0.7], marks=[2, 0], initial_mark=1, horizon=1.0)
    assert record.mark_at(0.0) == 1
    assert record.mark_at(0.2) == 2
    assert record.mark_at(0.69) == 2
    assert record.mark_at(1.0) == 0
    assert record.count_at(0.5) == 1


def test_poisson_batch_is_seed_deterministic(grid):
    first = simulate_marks_poisson_batch(grid, 1.0, 200, seed=5)
    second = simulate_marks_poisson_batch(grid, 1.0, 200, seed=5)
    assert np.array_equal(first.times, second.times)
    assert np.array_equal(first.marks, second.marks)


def test_poisson_batch_statistics(grid):
    size = 20_000
    jumps = simulate_marks_poisson_batch(grid, 2.0, size, seed=11)
    counts = jumps.counts
    assert abs(counts.mean() - grid.total_mass * 2.0) < 4 * math.sqrt(grid.total_mass * 2.0 / size)
    marks = jumps.marks[np.isfinite(jumps.times)]
    freq = np.bincount(marks, minlength=grid.size) / marks.size
    assert np.allclose(freq, grid.probabilities, atol=0.01)
    finite = np.where(np.isfinite(jumps.times), jumps.times, 3.0)
    assert np.all(np.diff(finite, axis=1) >= 0)
    assert np.all(jumps.times[np.isfinite(jumps.times)] <= 2.0)


def test_poisson_batch_starts_at_anchor(grid):
    jumps = simulate_marks_poisson_batch(grid, 1.0, 50, seed=2)
    assert np.all(jumps.initial_marks == grid.anchor_index)
    no_jump = jumps.counts == 0
    assert np.all(jumps.marks_at(0.999)[no_jump] == grid.anchor_index)


def test_initial_marks_follow_weights(grid):
    marks = draw_initial_marks(grid, 30_000, seed=4)
    freq = np.bincount(marks, minlength=grid.size) / marks.size
    assert np.allclose(freq, grid.probabilities, atol=0.01)


def test_single_path_matches_batch_interface(grid):
    record = simulate_marks_poisson(grid, 1.0, seed=3)
    assert isinstance(record, JumpRecord)
    assert record.horizon == 1.0


def test_kappa_of_unit_intensity_is_one(grid):
    jumps = simulate_marks_poisson_batch(grid, 1.0, 500, seed=1)
    kappa = doleans_kappa_batch(jumps, grid, constant(grid, 1.0), 1.0)
    assert np.allclose(kappa, 1.0)


def test_kappa_of_constant_intensity_is_closed_form(grid):
    c = 2.0
    jumps = simulate_marks_poisson_batch(grid, 1.0, 500, seed=9)
    kappa = doleans_kappa_batch(jumps, grid, constant(grid, c), 1.0)
    expected = np.exp((1.0 - c) * grid.total_mass) * c ** jumps.counts
    assert np.allclose(kappa, expected, rtol=1e-10)


def test_kappa_at_intermediate_time(grid):
    c = 0.5
    jumps = simulate_marks_poisson_batch(grid, 1.0, 300, seed=10)
    kappa = doleans_kappa_batch(jumps, grid, constant(grid, c), 0.4)
    expected = np.exp((1.0 - c) * grid.total_mass * 0.4) * c ** jumps.counts_at(0.4)
    assert np.allclose(kappa, expected, rtol=1e-10)


def test_kappa_has_unit_mean_for_mark_dependent_intensity(grid):
    jumps = simulate_marks_poisson_batch(grid, 1.0, 40_000, seed=21)
    kappa = doleans_kappa_batch(jumps, grid, mark_dependent(grid), 1.0)
    mean, stderr = mean_stderr(kappa)
    assert np.all(kappa > 0)
    assert abs(mean - 1.0) < 4 * stderr


def test_single_path_kappa_validates_time(grid):
    record = simulate_marks_poisson(grid, 1.0, seed=3)
    assert doleans_kappa(record, grid, constant(grid, 1.0), None, 0.5) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        doleans_kappa(record, grid, constant(grid, 1.0), None, 1.5)


def test_intensity_rejects_non_finite_values(grid):
    broken = IntensityControl(
        fn=lambda t, f, m, n: np.full((np.shape(m)[0], grid.size), np.nan), lower=0.5, upper=2.0
    )
    jumps = simulate_marks_poisson_batch(grid, 1.0, 10, seed=0)
    with pytest.raises(NumericError):
        doleans_kappa_batch(jumps, grid, broken, 1.0)


def test_intensity_bounds_are_validated():
    with pytest.raises(ValidationError):
        IntensityControl(fn=lambda *args: None, lower=0.0, upper=1.0)


def test_thinning_matches_intensity(grid):
    size, c = 20_000, 2.0
    jumps = simulate_marks_controlled_batch(grid, 1.0, constant(grid, c), size, seed=8)
    expected = c * grid.total_mass
    assert abs(jumps.counts.mean() - expected) < 4 * math.sqrt(expected / size)


def test_thinning_agrees_with_reweighting(grid):
    """P^nu[I_T = a_0] from thinned paths and from kappa-weighted Poisson paths."""
    nu = mark_dependent(grid)
    size = 20_000
    thinned = simulate_marks_controlled_batch(grid, 1.0, nu, size, seed=31)
    direct = mean_stderr(thinned.marks_at(1.0) == 0)
    poisson = simulate_marks_poisson_batch(grid, 1.0, size, seed=32)
    kappa = doleans_kappa_batch(poisson, grid, nu, 1.0)
    weighted = mean_stderr(kappa * (poisson.marks_at(1.0) == 0))
    assert abs(direct[0] - weighted[0]) < 4 * math.hypot(direct[1], weighted[1])


def test_timechange_with_unit_intensity_reproduces_skeleton(grid):
    skeleton = simulate_marks_poisson_batch(grid, 1.0, 200, seed=12)
    out = construct_timechange_batch(grid, constant(grid, 1.0), skeleton, 1.0, seed=13)
    assert np.array_equal(out.counts, skeleton.counts)
    finite = np.isfinite(skeleton.times)
    assert np.allclose(out.times[finite], skeleton.times[finite], atol=1e-8)


def test_timechange_needs_long_skeleton(grid):
    skeleton = simulate_marks_poisson_batch(grid, 1.0, 10, seed=12)
    with pytest.raises(ConfigurationError):
        construct_timechange_batch(grid, constant(grid, 2.0), skeleton, 1.0, seed=13)


def test_timechange_first_jump_law():
    row = check_timechange_law(seed=3, samples=20_000)
    assert row.passed, row


def test_timechange_single_path(grid):
    skeleton = simulate_marks_poisson(grid, 2.0, seed=14)
    record = construct_timechange_process(grid, constant(grid, 2.0), skeleton, None, 1.0, seed=15)
    assert record.count == skeleton.count
    assert np.allclose(record.times, skeleton.times / 2.0, atol=1e-8)


def test_step_control_validation():
    with pytest.raises(ValidationError):
        StepControl(switch_times=np.array([0.5]), indices=np.array([0]))
    control = StepControl(switch_times=np.array([0.3, 0.6]), indices=np.array([1, 2, 0]))
    assert control.initial_index == 1
    assert control.index_at(0.3) == 2
    assert control.index_at(0.99) == 0


def test_perturbed_process_shadows_step_control(grid):
    control = StepControl(switch_times=np.array([0.3, 0.6]), indices=np.array([1, 2, 0]))
    coarse = [
        integrated_mark_distance(construct_perturbed_process(grid, control, 1, 1, 1.0, s), control, grid)
        for s in range(50)
    ]
    fine = [
        integrated_mark_distance(construct_perturbed_process(grid, control, 64, 64, 1.0, s), control, grid)
        for s in range(50)
    ]
    assert np.mean(fine) < 0.05
    assert np.mean(fine) < np.mean(coarse)


def test_perturbed_process_starts_at_control(grid):
    control = StepControl(switch_times=np.array([0.5]), indices=np.array([2, 0]))
    record = construct_perturbed_process(grid, control, 4, 4, 1.0, seed=1)
    assert record.initial_mark == 2


def test_perturbed_compensator_bounds(grid):
    lower, upper = perturbed_compensator_bounds(grid, m=2, k=4, switches=3)
    assert lower == pytest.approx(0.25)
    assert upper == pytest.approx(0.25 + 2 * 8 / 0.5)


def test_jump_batch_round_trips_records(grid):
    records = [
        JumpRecord(times=[0.1, 0.4], marks=[0, 2], initial_mark=1, horizon=1.0),
        JumpRecord(times=[], marks=[], initial_mark=0, horizon=1.0),
    ]
    batch = JumpBatch.from_records(records)
    assert batch.times.shape == (2, 2)
    assert np.array_equal(batch.marks_at(0.5), [2, 0])
    assert batch.record(1).count == 0


def test_single_controlled_path_matches_batch(grid):
    nu = constant(grid, 2.0)
    record = simulate_marks_controlled(grid, 1.0, nu, None, seed=12)
    batch = simulate_marks_controlled_batch(grid, 1.0, nu, 1, seed=12)
    assert isinstance(record, JumpRecord)
    assert np.array_equal(record.times, batch.record(0).times)
    assert np.array_equal(record.marks, batch.record(0).marks)
    assert record.initial_mark == grid.anchor_index
    assert np.all((record.times > 0) & (record.times <= 1.0))


def test_single_controlled_path_jump_rate(grid):
    c = 2.0
    counts = [
        simulate_marks_controlled(grid, 1.0, constant(grid, c), None, seed=s).count for s in range(2000)
    ]
    expected = c * grid.total_mass
    assert abs(np.mean(counts) - expected) < 4 * math.sqrt(expected / len(counts))
