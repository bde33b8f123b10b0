# /tests/test_metrics.py

import json

import numpy as np
import pytest

from core.errors import InputError
from core.events import EpisodeLog, SimEvent, StepRecord
from core.metrics import MetricReport, ade, comfort_score, compare_reports, event_rate, failure_rates, fde
from core.types import Trajectory


def test_ade_and_fde_reference_values():
    pred = np.zeros((3, 2))
    assert ade(pred, [[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]], 2) == pytest.approx(5.0)
    assert fde(pred, [[9.0, 9.0], [0.0, 1.0], [0.0, 2.0]], 2) == pytest.approx(2.0)
    # 인덱스 0 (시작 상태)는 오차에 들어가지 않음
    assert ade(pred, [[9.0, 9.0], [0.0, 0.0], [0.0, 0.0]], 2) == 0.0


def test_ade_accepts_trajectories_and_truncates():
    traj = Trajectory(0, np.arange(5) * 0.5, np.stack([np.arange(5.0), np.zeros(5)], axis=1), np.zeros((5, 2)),
                      np.ones(5, dtype=bool))
    gt = np.stack([np.arange(5.0), np.ones(5)], axis=1)
    assert ade(traj, gt, 2) == pytest.approx(1.0)
    assert fde(traj, gt, 4) == pytest.approx(1.0)


def test_ade_rejects_short_inputs():
    with pytest.raises(InputError):
        ade(np.zeros((2, 2)), np.zeros((5, 2)), 3)
    with pytest.raises(InputError):
        fde(np.zeros((5, 2)), np.zeros((5, 2)), 0)


def test_comfort_score():
    dt = 0.1
    assert comfort_score(np.full(61, 1.5), dt) == 100.0
    alternating = np.tile([4.0, -4.0], 30)
    assert comfort_score(alternating, dt) == 0.0
    trace = np.random.default_rng(0).normal(scale=0.3, size=200)
    scores = [comfort_score(trace, dt, jerk_threshold=j) for j in (0.5, 2.0, 5.0, 50.0)]
    assert scores == sorted(scores)
    assert scores[-1] == 100.0
    with pytest.raises(InputError):
        comfort_score(np.zeros(10), dt)


def _log(n_steps, collision_steps, offroad_steps=()):
    log = EpisodeLog("e", 0, 0.1)
    for k in range(n_steps):
        events = []
        if k in collision_steps:
            events.append(SimEvent("collision", k, (0, 1)))
        if k in offroad_steps:
            events.append(SimEvent("offroad", k, (0,)))
        log.records.append(StepRecord(k, True, [{"id": 0, "a": 0.0}], events))
    return log


def test_failure_rates_count_controlled_steps():
    log = _log(40, {3, 10, 11})
    log.records.insert(0, StepRecord(-1, False, [], [SimEvent("collision", -1, (0, 1))]))
    assert event_rate([log], "collision") == pytest.approx(7.5)
    offroad, collision = failure_rates([log, _log(10, set(), {0})])
    assert collision == pytest.approx(6.0)
    assert offroad == pytest.approx(2.0)
    with pytest.raises(InputError):
        failure_rates([])


def test_report_validation_and_rendering():
    with pytest.raises(InputError):
        MetricReport(collision_pct=120.0)
    report = MetricReport("prednet", {1.0: 0.4, 0.5: 0.2}, {1.0: 0.8}, comfort_pct=90.0, n_samples=3)
    data = json.loads(report.to_json())
    assert data["ade_m"] == {"1": 0.4, "0.5": 0.2}
    frame = report.to_frame()
    assert frame["metric"].tolist()[:3] == ["ade@0.5s", "ade@1s", "fde@1s"]
    table = report.to_table()
    assert table.startswith("# prednet")
    assert "comfort_pct" in table and "0.4000" in table


def test_compare_reports():
    a = MetricReport("a", {1.0: 0.4})
    b = MetricReport("b", {1.0: 0.6})
    table = compare_reports([a, b])
    assert list(table.columns) == ["a", "b"]
    assert table.loc["ade@1s", "b"] == pytest.approx(0.6)
