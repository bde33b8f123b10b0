# /tests/test_train_agent.py

import numpy as np
import pytest

from agents.train_agent import TrainAgent
from clients.checkpoint_client import CheckpointClient
from clients.dataset_client import DatasetClient
from core.config import TrainConfig
from core.errors import TrainingDivergedError, UsageError


@pytest.fixture
def samples(tiny_config, highway_scene, lane_map):
    return DatasetClient().make_samples([highway_scene], lane_map, tiny_config)


@pytest.fixture
def agent():
    return TrainAgent(CheckpointClient())


SETTINGS = TrainConfig(iterations=3, batch_size=2, lr=1e-2, checkpoint_every=2, prefetch=2, workers=2)


def test_training_is_deterministic(agent, samples, tiny_config):
    a = agent.train(samples, tiny_config, SETTINGS, seed=5, dtype=np.float64, progress=False)
    b = agent.train(samples, tiny_config, SETTINGS, seed=5, dtype=np.float64, progress=False)
    assert a.history == b.history
    assert len(a.history) == 3 and all(np.isfinite(a.history))
    for name, value in a.weights.params.items():
        np.testing.assert_array_equal(value, b.weights.params[name])
    assert set(a.breakdown[0]) == {"focal", "velocity", "backtrace", "total"}


def test_training_changes_a_copy(agent, samples, tiny_weights, tiny_config):
    before = {k: v.copy() for k, v in tiny_weights.params.items()}
    result = agent.train(samples, tiny_config, SETTINGS, weights=tiny_weights, progress=False)
    for name, value in tiny_weights.params.items():
        np.testing.assert_array_equal(value, before[name])
    assert any(not np.array_equal(result.weights.params[k], before[k]) for k in before)


def test_checkpoints_are_written(agent, samples, tiny_config, tmp_path):
    settings = SETTINGS.model_copy(update={"iterations": 4})
    result = agent.train(samples, tiny_config, settings, out_dir=tmp_path, dtype=np.float64, progress=False)
    assert [p.name for p in result.checkpoints] == ["weights_000002.pnet", "weights_000004.pnet"]
    client = CheckpointClient()
    assert client.read_meta(result.checkpoints[0])["iteration"] == 2
    assert client.load_weights(result.checkpoints[-1]).config == tiny_config


def test_empty_dataset(agent, tiny_config):
    with pytest.raises(UsageError):
        agent.train([], tiny_config, SETTINGS, progress=False)


def test_divergence_reports_batch(agent, samples, tiny_weights, tiny_config, tmp_path):
    broken = tiny_weights.copy()
    broken.params["dec.up.b"][...] = np.nan
    with pytest.raises(TrainingDivergedError) as err:
        agent.train(samples, tiny_config, SETTINGS, weights=broken, out_dir=tmp_path, progress=False)
    assert err.value.batch_id == 0
    dump = np.load(err.value.dump_path)
    assert dump["dynamic"].shape[0] == SETTINGS.batch_size
