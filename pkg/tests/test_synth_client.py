# /tests/test_synth_client.py

import numpy as np
import pytest

from clients.synth_client import Road, SynthClient
from core.config import SynthSection
from core.errors import ConfigError
from core.lanes import lanes_of
from core.raster import check_uniform


def test_road_pose_straight_and_arc():
    pos, heading = Road(2, 3.5).pose(1, 20.0, offset=0.5)
    np.testing.assert_allclose(pos, [20.0, 4.0])
    assert heading == 0.0
    arc = Road(1, 3.5, curvature=0.01)
    pos, heading = arc.pose(0, 50.0 * np.pi)
    np.testing.assert_allclose(pos, [100.0, 100.0], atol=1e-9)
    assert heading == pytest.approx(np.pi / 2)


def test_longitudinal_motion_is_midpoint_rule():
    client = SynthClient(SynthSection(n_scenes=2, frames=20, brake_prob=1.0))
    scenes, _ = client.synth_dataset(seed=3)
    dt = client.dt
    for scene in scenes:
        assert check_uniform(scene.frames) == pytest.approx(dt)
        for a, b in zip(scene.frames[:-1], scene.frames[1:]):
            for pa in a.agents:
                pb = b.get(pa.id)
                assert pb.x - pa.x == pytest.approx(0.5 * (pa.vx + pb.vx) * dt, abs=1e-9)
                assert pb.y == pa.y


def test_same_seed_same_data():
    client = SynthClient(SynthSection(n_scenes=3, frames=8))
    a, _ = client.synth_dataset(seed=11)
    b, _ = client.synth_dataset(seed=11)
    c, _ = client.synth_dataset(seed=12)
    assert [s.ego_id for s in a] == [s.ego_id for s in b]
    assert a[2].frames[-1].agents == b[2].frames[-1].agents
    assert a[2].frames[-1].agents != c[2].frames[-1].agents


def test_agents_stay_on_arc_lanes():
    client = SynthClient(SynthSection(n_scenes=2, road="arc", frames=24))
    scenes, lane_map = client.synth_dataset(seed=0)
    lanes = lanes_of(lane_map)
    for scene in scenes:
        for frame in scene.frames:
            for agent in frame.agents:
                assert min(lane.distance(agent.position) for lane in lanes) < 0.1


def test_mixed_roads_and_ego_present():
    client = SynthClient(SynthSection(n_scenes=4, road="mixed", frames=6))
    scenes, lane_map = client.synth_dataset(seed=1)
    assert len(lane_map.centerlines()) == 4
    for scene in scenes:
        assert all(frame.get(scene.ego_id) is not None for frame in scene.frames)


def test_capacity_is_enforced():
    client = SynthClient(SynthSection(n_agents=100, road_length=100.0))
    assert client.lane_capacity() == 12
    with pytest.raises(ConfigError):
        client.synth_dataset(seed=0)
