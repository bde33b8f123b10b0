# /tests/test_events.py

import json

import numpy as np
import pytest
from shapely.geometry import Polygon

from core.errors import InputError, SchemaError
from core.events import (EpisodeLog, SimEvent, StepRecord, boxes_overlap, cut_in_agents, detect_collision,
                         detect_cut_in, detect_offroad)
from core.lanes import lanes_of
from core.types import AgentState, SceneFrame


def test_sat_matches_polygon_oracle():
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(300):
        a = AgentState(0, *rng.uniform(-4, 4, 2), 0.0, 0.0, rng.uniform(-np.pi, np.pi),
                       rng.uniform(2, 6), rng.uniform(1, 3))
        b = AgentState(1, *rng.uniform(-4, 4, 2), 0.0, 0.0, rng.uniform(-np.pi, np.pi),
                       rng.uniform(2, 6), rng.uniform(1, 3))
        expected = Polygon(a.corners()).intersects(Polygon(b.corners()))
        assert boxes_overlap(a.corners(), b.corners()) == expected
        assert boxes_overlap(b.corners(), a.corners()) == expected
        hits += expected
    assert 0 < hits < 300


def test_touching_boxes_overlap():
    a = AgentState(0, 0.0, 0.0, 0.0, 0.0, 0.0, length=4.0, width=2.0)
    b = AgentState(1, 4.0, 0.0, 0.0, 0.0, 0.0, length=4.0, width=2.0)
    assert boxes_overlap(a.corners(), b.corners())
    c = AgentState(2, 4.01, 0.0, 0.0, 0.0, 0.0, length=4.0, width=2.0)
    assert not boxes_overlap(a.corners(), c.corners())


def test_detect_collision_pairs_are_sorted():
    agents = [AgentState(5, 0.0, 0.0, 0.0, 0.0, 0.0), AgentState(2, 3.0, 0.5, 0.0, 0.0, 0.2),
              AgentState(9, 50.0, 0.0, 0.0, 0.0, 0.0)]
    assert detect_collision(agents) == [(2, 5)]
    assert detect_collision(agents[2:]) == []


def test_offroad(lane_map):
    lanes = lanes_of(lane_map)
    assert not detect_offroad(AgentState(0, 30.0, 1.75, 0.0, 0.0, 0.0), lanes)
    assert detect_offroad(AgentState(0, 30.0, 6.0, 0.0, 0.0, 0.0), lanes)
    assert detect_offroad(AgentState(0, 30.0, -2.5, 0.0, 0.0, 0.0), lanes)
    assert not detect_offroad(AgentState(0, 30.0, -2.5, 0.0, 0.0, 0.0), lanes, road_halfwidth=3.0)
    with pytest.raises(InputError):
        detect_offroad(AgentState(0, 0.0, 0.0, 0.0, 0.0, 0.0), lanes, road_halfwidth=0.0)


def _frames(neighbor_prev, neighbor_cur, extra=()):
    ego_prev = AgentState(0, 0.0, 0.0, 10.0, 0.0, 0.0)
    ego_cur = AgentState(0, 10.0 / 6.0, 0.0, 10.0, 0.0, 0.0)
    return [SceneFrame(0.0, (ego_prev, neighbor_prev) + tuple(extra)),
            SceneFrame(1.0 / 6.0, (ego_cur, neighbor_cur) + tuple(extra))]


def test_cut_in_detected(lane_map):
    ego_lane = lanes_of(lane_map)[0]
    frames = _frames(AgentState(1, 10.0, 3.0, 10.0, -3.0, -0.3), AgentState(1, 11.5, 1.5, 10.0, -3.0, -0.3))
    assert cut_in_agents(frames, 0, ego_lane) == [1]
    assert detect_cut_in(frames, 0, ego_lane)


def test_neighbor_holding_lane_is_not_cut_in(lane_map):
    ego_lane = lanes_of(lane_map)[0]
    frames = _frames(AgentState(1, 10.0, 3.5, 10.0, 0.0, 0.0), AgentState(1, 11.5, 3.5, 10.0, 0.0, 0.0))
    assert not detect_cut_in(frames, 0, ego_lane)


def test_cut_in_needs_heading_and_position(lane_map):
    ego_lane = lanes_of(lane_map)[0]
    gentle = _frames(AgentState(1, 10.0, 1.9, 10.0, -0.5, -0.05), AgentState(1, 11.5, 1.6, 10.0, -0.5, -0.05))
    assert not detect_cut_in(gentle, 0, ego_lane)
    behind = _frames(AgentState(1, -10.0, 3.0, 10.0, -3.0, -0.3), AgentState(1, -8.5, 1.5, 10.0, -3.0, -0.3))
    assert not detect_cut_in(behind, 0, ego_lane)
    lead = AgentState(2, 6.0, 0.0, 10.0, 0.0, 0.0)
    past_lead = _frames(AgentState(1, 10.0, 3.0, 10.0, -3.0, -0.3), AgentState(1, 11.5, 1.5, 10.0, -3.0, -0.3),
                        extra=(lead,))
    assert not detect_cut_in(past_lead, 0, ego_lane)
    with pytest.raises(InputError):
        cut_in_agents(past_lead[:1], 0, ego_lane)


def _log():
    log = EpisodeLog("ep-1", 0, 1.0 / 6.0, stepper="baseline", task="cut_in", seed=3)
    for k in range(4):
        agents = [{"id": 0, "x": float(k), "y": 0.0, "a": 0.5 * k}, {"id": 1, "x": 10.0, "y": 0.0, "a": 0.0}]
        events = [SimEvent("collision", k, (0, 1))] if k == 3 else []
        log.records.append(StepRecord(k, k >= 1, agents, events, reward=-0.1 * k if k >= 1 else None))
    return log


def test_episode_log_round_trip(tmp_path):
    log = _log()
    path = tmp_path / "ep.jsonl"
    log.save(path)
    first = json.loads(path.read_text().splitlines()[0])
    assert first["type"] == "episode"
    back = EpisodeLog.load(path)
    assert (back.episode_id, back.ego_id, back.stepper, back.task, back.seed) == ("ep-1", 0, "baseline", "cut_in", 3)
    assert len(back.records) == 4
    assert len(back.controlled_steps) == 3
    assert back.events("collision") == [SimEvent("collision", 3, (0, 1))]
    np.testing.assert_allclose(back.ego_accels(), [0.5, 1.0, 1.5])
    assert back.records[0].reward is None


def test_episode_log_reports_bad_line(tmp_path):
    lines = _log().to_lines()
    lines[2] = json.dumps({"type": "step", "step": 1})
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError) as err:
        EpisodeLog.load(path)
    assert err.value.location == "line 3"


def test_unknown_event_kind():
    with pytest.raises(InputError):
        SimEvent("fender_bender", 0)
