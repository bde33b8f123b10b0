# /tests/test_types.py

import math

import numpy as np
import pytest

from core.errors import InputError
from core.types import (AgentState, LaneMap, LanePolyline, SceneFrame, Trajectory, ego_to_world, vectors_to_ego,
                        world_to_ego, wrap_angle)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    wrapped = wrap_angle(np.linspace(-20, 20, 101))
    assert np.all(wrapped > -math.pi) and np.all(wrapped <= math.pi)


def test_ego_frame_round_trip():
    ego = AgentState(0, 3.0, -2.0, 1.0, 1.0, 0.7)
    pts = np.random.default_rng(1).normal(size=(20, 2)) * 30
    np.testing.assert_allclose(ego_to_world(world_to_ego(pts, ego), ego), pts, atol=1e-12)


def test_ego_frame_axes():
    """ 진행 방향 앞은 +x, 왼쪽은 +y. """
    ego = AgentState(0, 0.0, 0.0, 0.0, 5.0, math.pi / 2)
    np.testing.assert_allclose(world_to_ego([0.0, 10.0], ego), [10.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(world_to_ego([-3.0, 0.0], ego), [0.0, 3.0], atol=1e-12)
    np.testing.assert_allclose(vectors_to_ego(ego.velocity, ego), [5.0, 0.0], atol=1e-12)


def test_corners_counter_clockwise():
    agent = AgentState(0, 1.0, 1.0, 0.0, 0.0, 0.3, length=4.0, width=2.0)
    c = agent.corners()
    area = 0.5 * np.sum(c[:, 0] * np.roll(c[:, 1], -1) - np.roll(c[:, 0], -1) * c[:, 1])
    assert area == pytest.approx(8.0)


def test_agent_rejects_non_positive_size():
    with pytest.raises(InputError):
        AgentState(0, 0.0, 0.0, 0.0, 0.0, 0.0, length=0.0)


def test_frame_rejects_duplicates_and_nan():
    a = AgentState(1, 0.0, 0.0, 0.0, 0.0, 0.0)
    with pytest.raises(InputError):
        SceneFrame(0.0, (a, a))
    with pytest.raises(InputError):
        SceneFrame(0.0, (a.moved(x=float("nan")),))


def test_polyline_validation():
    with pytest.raises(InputError):
        LanePolyline(np.array([[0.0, 0.0]]), 1)
    with pytest.raises(InputError):
        LanePolyline(np.array([[0.0, 0.0], [1.0, 0.0]]), 7)
    poly = LanePolyline(np.array([[0.0, 0.0], [1.0, 0.0]]), 3)
    np.testing.assert_array_equal(poly.altitudes, [0.0, 0.0])


def test_lane_map_splits_centerlines():
    center = LanePolyline(np.array([[0.0, 0.0], [10.0, 0.0]]), 0)
    divider = LanePolyline(np.array([[0.0, 1.75], [10.0, 1.75]]), 1)
    lane_map = LaneMap([center, divider])
    assert lane_map.centerlines() == [center]
    assert lane_map.dividers() == [divider]


def test_trajectory_requires_increasing_times():
    with pytest.raises(InputError):
        Trajectory(0, [0.0, 0.0], np.zeros((2, 2)), np.zeros((2, 2)), [True, True])
    traj = Trajectory(0, [0.0, 0.5, 1.0], np.zeros((3, 2)), np.zeros((3, 2)), [True] * 3)
    assert traj.n_steps == 2
