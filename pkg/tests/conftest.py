# /tests/conftest.py

import numpy as np
import pytest

from clients.synth_client import Road
from core.prednet import NetConfig, init_weights
from core.raster import GridSpec
from core.types import AgentState, Scene, SceneFrame

DT = 1.0 / 6.0


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def constant_velocity_scene(specs, n_frames: int, dt: float = DT, scene_id: str = "cv", ego_id: int | None = 0) -> Scene:
    """ specs: (id, x, y, vx, vy) 목록. 모든 차량이 등속 직선 운동합니다. """
    frames = []
    for k in range(n_frames):
        t = k * dt
        agents = tuple(AgentState(i, x + vx * t, y + vy * t, vx, vy, float(np.arctan2(vy, vx)) if (vx or vy) else 0.0)
                       for i, x, y, vx, vy in specs)
        frames.append(SceneFrame(t, agents, scene_id))
    return Scene(scene_id, frames, ego_id)


@pytest.fixture
def tiny_config() -> NetConfig:
    return NetConfig(history_len=3, horizon=4, grid=GridSpec(32, 2.0), stem=4, blocks=((8, 2), (8, 2), (8, 1)))


@pytest.fixture
def tiny_weights(tiny_config):
    return init_weights(tiny_config, np.random.default_rng(0), dtype=np.float64)


@pytest.fixture
def road():
    return Road(2, 3.5)


@pytest.fixture
def lane_map(road):
    return road.lane_map(400.0)


@pytest.fixture
def highway_scene():
    """ 두 차로 위 세 대의 등속 장면 (ego = 0). """
    return constant_velocity_scene([(0, 0.0, 0.0, 10.0, 0.0), (1, 20.0, 0.0, 9.0, 0.0), (2, 8.0, 3.5, 11.0, 0.0)],
                                   n_frames=16)
