# /tests/test_extract.py

import numpy as np
import pandas as pd
import pytest

from core.errors import InputError, UsageError
from core.extract import (TRAJECTORY_COLUMNS, ExtractionParams, ExtractionSample, extend_analytic, extract_all,
                          extract_trajectory, fit_params, mean_ade, write_trajectories_csv)
from core.prednet import NetOutput
from core.raster import GridSpec
from core.types import AgentState, SceneFrame

GRID = GridSpec(32, 2.0)
DT = 1.0 / 6.0


def constant_fields(horizon=6, occ=1.0, vel=(0.0, 0.0), back=(0.0, 0.0), size=32) -> NetOutput:
    velocity = np.zeros((horizon, 2, size, size))
    velocity[:, 0], velocity[:, 1] = vel
    backtrace = np.zeros((horizon, 2, size, size))
    backtrace[:, 0], backtrace[:, 1] = back
    return NetOutput(np.full((horizon, size, size), occ), velocity, backtrace)


def test_closed_gate_is_plain_euler():
    params = ExtractionParams(b_alpha=-40.0)
    traj = extract_trajectory([0.0, 0.0], [5.0, 1.0], constant_fields(vel=(-3.0, 0.0)), params, GRID)
    assert len(traj) == 7
    expected = np.arange(7)[:, None] * DT * np.array([5.0, 1.0])
    np.testing.assert_allclose(traj.positions, expected, atol=1e-12)
    np.testing.assert_allclose(traj.velocities[-1], [5.0, 1.0], atol=1e-12)


def test_open_gate_follows_velocity_field():
    params = ExtractionParams(w_alpha=0.0, b_alpha=40.0)
    traj = extract_trajectory([0.0, 0.0], [0.0, 0.0], constant_fields(vel=(5.0, 0.0)), params, GRID)
    # 첫 스텝은 정지 상태에서 출발하고 그 뒤로는 스텝당 5/6 m
    np.testing.assert_allclose(np.diff(traj.positions[1:, 0]), 5.0 * DT, atol=1e-12)
    np.testing.assert_allclose(traj.velocities[1:], [[5.0, 0.0]] * 6, atol=1e-12)
    assert traj.in_bounds.all()


def test_position_correction_uses_backtrace_channels():
    corr_p = np.zeros((2, 4))
    corr_p[0, 2] = corr_p[1, 3] = 1.0
    params = ExtractionParams(w_alpha=0.0, b_alpha=40.0, corr_p=corr_p)
    traj = extract_trajectory([0.0, 0.0], [0.0, 0.0], constant_fields(horizon=3, back=(-1.0, 0.5)), params, GRID)
    np.testing.assert_allclose(traj.positions[1], [-1.0, 0.5], atol=1e-12)


def test_outside_grid_holds_velocity():
    params = ExtractionParams(w_alpha=0.0, b_alpha=40.0)
    traj = extract_trajectory([100.0, 0.0], [3.0, 0.0], constant_fields(vel=(9.0, 0.0)), params, GRID)
    assert not traj.in_bounds[1:].any()
    np.testing.assert_allclose(traj.velocities, [[3.0, 0.0]] * 7)


def test_rejects_non_finite_start():
    with pytest.raises(InputError):
        extract_trajectory([np.nan, 0.0], [0.0, 0.0], constant_fields(), ExtractionParams(), GRID)


def test_params_vector_and_dict():
    params = ExtractionParams(0.5, -1.0, np.arange(8.0), -np.arange(8.0), DT)
    assert params.to_vector().shape == (18,)
    back = ExtractionParams.from_dict(params.to_dict())
    np.testing.assert_array_equal(back.to_vector(), params.to_vector())
    with pytest.raises(InputError):
        ExtractionParams(w_alpha=np.inf)


def test_extract_all_skips_agents_off_grid():
    ego = AgentState(0, 0.0, 0.0, 5.0, 0.0, 0.0)
    frame = SceneFrame(1.0, (ego, AgentState(1, 10.0, 0.0, 5.0, 0.0, 0.0), AgentState(2, 500.0, 0.0, 5.0, 0.0, 0.0)))
    out = extract_all(frame, ego, constant_fields(), ExtractionParams(), GRID)
    assert set(out) == {0, 1}
    assert out[1].times[0] == pytest.approx(1.0)


def _samples():
    """ 실제 궤적은 등속 5 m/s, 필드는 그 속도를 담고 초기 속도는 0. """
    outputs = constant_fields(occ=1.0, vel=(5.0, 0.0))
    truth = np.arange(7)[:, None] * DT * np.array([5.0, 0.0])
    return [ExtractionSample(outputs, np.zeros(2), np.zeros(2), truth)]


def test_fit_never_worse_than_start():
    samples = _samples()
    start = mean_ade(samples, ExtractionParams(dt=DT), GRID)
    params, value = fit_params(samples, DT, GRID, maxiter=60)
    assert value <= start
    assert mean_ade(samples, params, GRID) == pytest.approx(value)


def test_fit_needs_samples():
    with pytest.raises(UsageError):
        fit_params([], DT, GRID)


def test_extend_analytic_without_lanes():
    traj = extract_trajectory([0.0, 0.0], [6.0, 0.0], constant_fields(horizon=4), ExtractionParams(b_alpha=-40.0), GRID)
    longer = extend_analytic(traj, [], horizon_s=2.0)
    assert len(longer) == 13
    np.testing.assert_allclose(longer.positions[:5], traj.positions)
    np.testing.assert_allclose(np.diff(longer.positions[:, 0]), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.diff(longer.times), DT)
    assert extend_analytic(traj, [], horizon_s=0.5) is traj


def test_trajectory_csv_columns(tmp_path):
    traj = extract_trajectory([0.0, 0.0], [1.0, 0.0], constant_fields(horizon=2), ExtractionParams(), GRID, agent_id=4)
    path = write_trajectories_csv([traj], tmp_path / "out" / "traj.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == TRAJECTORY_COLUMNS
    assert frame["agent_id"].tolist() == [4, 4, 4]
    assert frame["step"].tolist() == [0, 1, 2]
