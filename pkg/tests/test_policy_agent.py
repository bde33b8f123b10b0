# /tests/test_policy_agent.py

import numpy as np
import pytest

from agents.policy_agent import AccController, PolicyAgent, SacController
from agents.scenario_agent import ScenarioAgent
from agents.sim_env import EpisodeConfig, EpisodeSource, SimEnv
from clients.checkpoint_client import CheckpointClient
from clients.synth_client import SynthClient
from core.config import SynthSection
from core.errors import UsageError
from core.policy import RLConfig
from tests.conftest import DT, constant_velocity_scene

SHORT = EpisodeConfig(replay_s=4 * DT, control_s=6 * DT, total_s=10 * DT)
SMALL_RL = RLConfig(hidden=8, feature_channels=(4, 4, 4), batch_size=4, warmup_steps=4, buffer_capacity=64)


@pytest.fixture
def agent():
    return PolicyAgent(ScenarioAgent(SynthClient(SynthSection())), CheckpointClient())


def _state(scene, lane_map):
    env = SimEnv(EpisodeConfig(replay_s=4 * DT, control_s=6 * DT, total_s=10 * DT, stepper="baseline"))
    return env, env.reset(EpisodeSource.from_scene(scene, lane_map))


def test_acc_follows_lead(highway_scene, lane_map):
    env, state = _state(highway_scene, lane_map)
    # 간격 14.84 m, 접근 속도 1 m/s
    assert AccController()(env, state) == pytest.approx(0.3 * (14.84 - 5.0 - 15.0) - 0.8)


def test_acc_without_lead(lane_map):
    env, state = _state(constant_velocity_scene([(0, 0.0, 0.0, 10.0, 0.0)], n_frames=4), lane_map)
    assert AccController()(env, state) == pytest.approx(2.0)
    env, state = _state(constant_velocity_scene([(0, 0.0, 0.0, 0.0, 0.0)], n_frames=4), lane_map)
    assert AccController()(env, state) == pytest.approx(4.0)


def test_make_env_is_seeded(agent, tiny_weights):
    env, source = agent.make_env("harsh_brake", tiny_weights, seed=3, episode=SHORT)
    _, again = agent.make_env("harsh_brake", tiny_weights, seed=3, episode=SHORT)
    assert source.source_id == again.source_id
    assert env.config.stepper == "prednet" and env.config.terminate_on == ("collision",)
    assert len(source.frames) == 4
    with pytest.raises(UsageError):
        agent.make_env("merge", tiny_weights, seed=0)


def test_evaluate_policy_percentages(agent, tiny_weights):
    pct = agent.evaluate_policy("cut_in", None, tiny_weights, n_episodes=2, episode=SHORT)
    assert pct in (0.0, 50.0, 100.0)
    pct = agent.evaluate_policy("harsh_brake", AccController(), tiny_weights, n_episodes=2, episode=SHORT)
    assert pct in (0.0, 50.0, 100.0)
    with pytest.raises(UsageError):
        agent.evaluate_policy("cut_in", None, tiny_weights, n_episodes=0)


def test_short_policy_training(agent, tiny_weights, tmp_path):
    result = agent.train_policy("harsh_brake", tiny_weights, SMALL_RL, episodes=2, seed=1, out_dir=tmp_path,
                                checkpoint_every=1, episode=SHORT, progress=False)
    assert len(result.returns) == 2
    assert all(1 <= n <= 6 for n in result.lengths)
    assert all(r <= 0.0 for r in result.returns)
    # 워밍업 4 전이 뒤부터 전이마다 갱신 한 번
    assert len(result.diagnostics) == max(0, sum(result.lengths) - 3)
    assert [p.name for p in result.checkpoints] == ["policy_00001.pnet", "policy_00002.pnet"]
    back = CheckpointClient().load_policy(result.checkpoints[-1])
    logs = agent.run_episodes("harsh_brake", SacController(back), tiny_weights, n_episodes=1, episode=SHORT)
    assert len(logs[0].controlled_steps) >= 1
    assert all(np.isfinite(r.agent(0)["a"]) for r in logs[0].controlled_steps)



def test_policy_training_leaves_prediction_weights_untouched(agent, tiny_weights):
    """ 정책 갱신은 PredictionNet 가중치를 바꾸지 않습니다. """
    before = {name: value.copy() for name, value in tiny_weights.params.items()}
    result = agent.train_policy("harsh_brake", tiny_weights, SMALL_RL, episodes=2, seed=1, episode=SHORT,
                                progress=False)
    assert result.diagnostics
    assert set(tiny_weights.params) == set(before)
    for name, value in before.items():
        np.testing.assert_array_equal(tiny_weights.params[name], value)

@pytest.mark.slow
def test_reward_tuning_records_trials(agent, tiny_weights):
    best, trials = agent.tune_rewards("harsh_brake", tiny_weights, SMALL_RL, episodes=2, eval_episodes=1,
                                      init_points=2, n_iter=1, episode=SHORT)
    assert set(best) == {"alpha1", "alpha2", "alpha3"}
    assert len(trials) == 3
