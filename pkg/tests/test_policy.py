# /tests/test_policy.py

import math

import numpy as np
import pytest
from scipy.integrate import quad

from core.errors import InputError, ShapeError, TrainingDivergedError, UsageError
from core.policy import (Batch, ReplayBuffer, RLConfig, SacOptimizers, act, critic_targets, feature_size, features,
                         gap_shaping, gaussian_head, init_policy, kinematic_observation, log_prob, reward,
                         reward_lower_bound, sac_update)

LATENT = (8, 4, 4)


@pytest.fixture
def small_rl():
    return RLConfig(hidden=8, feature_channels=(4, 4, 4), batch_size=4)


@pytest.fixture
def policy(small_rl):
    return init_policy(small_rl, LATENT, np.random.default_rng(0))


def _batch(n=4, seed=1, done=0.0):
    rng = np.random.default_rng(seed)
    return Batch(np.abs(rng.normal(size=(n, *LATENT))), rng.normal(size=(n, 4)) * 0.1, rng.uniform(-6, 4, n),
                 rng.uniform(-1, 0, n), np.abs(rng.normal(size=(n, *LATENT))), rng.normal(size=(n, 4)) * 0.1,
                 np.full(n, done))


def test_config_validation():
    with pytest.raises(InputError):
        RLConfig(gamma=1.0)
    with pytest.raises(InputError):
        RLConfig(a_min=4.0, a_max=4.0)
    with pytest.raises(InputError):
        RLConfig(alpha1=0.1)
    cfg = RLConfig()
    assert cfg.to_env(cfg.to_norm(-6.0)) == pytest.approx(-6.0)
    assert cfg.to_env(1.0) == pytest.approx(4.0)


def test_reward_reference_values():
    cfg = RLConfig()
    assert reward(2.0, 0.0, None, False, cfg) == pytest.approx(-0.2)
    assert reward(0.0, 0.0, 20.0, False, cfg) == 0.0
    assert reward(0.0, 0.0, None, True, cfg) == pytest.approx(-1.0)
    assert reward(0.0, 0.0, 10.0, False, cfg) == pytest.approx(-0.25)
    assert reward(0.0, 0.0, 500.0, False, cfg) == pytest.approx(-0.5)
    # 형상 항만 [-1, 0]으로 잘리고 합계는 자르지 않음
    assert reward(10.0, 0.0, None, True, cfg) == pytest.approx(-2.0)


def test_reward_respects_lower_bound():
    cfg = RLConfig()
    bound = reward_lower_bound(cfg)
    rng = np.random.default_rng(0)
    for _ in range(200):
        da = rng.uniform(0, cfg.a_max - cfg.a_min)
        dv = rng.uniform(0, 6.0 * cfg.dt)
        d = rng.choice([None, float(rng.uniform(0, 300))])
        assert reward(da, dv, d, bool(rng.integers(2)), cfg) >= bound


def test_gap_shaping():
    assert gap_shaping(None, 20.0) == 0.0
    assert gap_shaping(30.0, 20.0) == pytest.approx(-0.5)
    assert gap_shaping(500.0, 20.0) == -1.0
    with pytest.raises(InputError):
        gap_shaping(-1.0, 20.0)


def test_kinematic_observation():
    np.testing.assert_allclose(kinematic_observation(10.0, -3.0, None, 2.0), [1.0, -0.5, 1.0, 0.0])
    np.testing.assert_allclose(kinematic_observation(5.0, 0.0, 100.0, -5.0), [0.5, 0.0, 1.0, -0.5])


def test_feature_size():
    assert feature_size(LATENT, (4, 4, 4)) == 4
    assert feature_size((32, 16, 16)) == 16 * 2 * 2


def test_features_shape_and_zero_weights(policy):
    h = np.abs(np.random.default_rng(2).normal(size=LATENT))
    obs = features(h, policy, kinematic_observation(8.0, 0.0, None, 0.0))
    assert obs.shape == (4 + 4,)
    zeroed = policy.copy()
    for name in zeroed.params:
        if name.startswith("feat."):
            zeroed.params[name][...] = 0.0
    np.testing.assert_array_equal(features(h, zeroed, np.zeros(4)), 0.0)
    with pytest.raises(ShapeError):
        features(np.zeros((8, 2, 2)), policy)


def test_initial_target_mirrors_critics(policy):
    assert not any(k.startswith("pi.") for k in policy.target)
    assert set(policy.target) == {k for k in policy.params if not k.startswith("pi.")}
    assert policy.temperature == pytest.approx(0.1)


def test_act_modes(policy):
    obs = np.random.default_rng(3).normal(size=8)
    a1, _ = act(obs, policy, mode="mean")
    a2, _ = act(obs, policy, mode="mean")
    assert a1 == a2
    rng = np.random.default_rng(4)
    samples = [act(obs, policy, rng=rng)[0] for _ in range(200)]
    assert min(samples) >= -6.0 and max(samples) <= 4.0
    with pytest.raises(UsageError):
        act(obs, policy)
    with pytest.raises(UsageError):
        act(obs, policy, mode="greedy", rng=rng)


def test_act_log_prob_matches_density(policy):
    obs = np.random.default_rng(5).normal(size=8)
    accel, lp = act(obs, policy, rng=np.random.default_rng(6))
    mean, log_std = gaussian_head(obs, policy)
    assert log_prob(accel, mean[0], log_std[0], policy.config) == pytest.approx(lp, abs=1e-6)


def test_log_prob_is_a_density():
    cfg = RLConfig()
    total, _ = quad(lambda a: math.exp(log_prob(a, 0.3, -0.2, cfg)), cfg.a_min, cfg.a_max, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_replay_buffer_ring():
    buf = ReplayBuffer(3, LATENT)
    for i in range(5):
        buf.add(np.full(LATENT, i), np.zeros(4), float(i), -0.1 * i, np.zeros(LATENT), np.zeros(4), i == 4)
    assert len(buf) == 3 and buf.cursor == 2
    assert buf.h.dtype == np.float16
    assert sorted(buf.action) == [2.0, 3.0, 4.0]
    batch = buf.sample(16, np.random.default_rng(0))
    assert batch.h.dtype == np.float64 and len(batch) == 16
    assert set(batch.action) <= {2.0, 3.0, 4.0}
    with pytest.raises(UsageError):
        ReplayBuffer(2, LATENT).sample(1, np.random.default_rng(0))


def test_terminal_target_is_reward(policy):
    batch = _batch(done=1.0)
    y = critic_targets(batch, policy, np.random.default_rng(0).standard_normal(4))
    np.testing.assert_allclose(y, batch.reward)


def test_sac_update_moves_weights(small_rl):
    weights = init_policy(small_rl, LATENT, np.random.default_rng(0))
    before = weights.copy()
    opts = SacOptimizers.create(small_rl)
    diag = sac_update(_batch(), weights, np.random.default_rng(1), opts)
    assert opts.updates == 1
    assert math.isfinite(diag.critic_loss) and math.isfinite(diag.policy_loss)
    assert not np.allclose(weights.params["q1.l2.w"], before.params["q1.l2.w"])
    assert not np.allclose(weights.params["pi.l2.w"], before.params["pi.l2.w"])
    assert weights.log_temperature != before.log_temperature


def test_hard_target_update_copies():
    cfg = RLConfig(hidden=8, feature_channels=(4, 4, 4), batch_size=4, tau=1.0)
    weights = init_policy(cfg, LATENT, np.random.default_rng(0))
    sac_update(_batch(), weights, np.random.default_rng(1))
    for name, value in weights.target.items():
        np.testing.assert_allclose(value, weights.params[name])


def test_sac_update_diverges_on_nan(policy, tmp_path):
    policy.params["q1.l2.b"][...] = np.nan
    with pytest.raises(TrainingDivergedError) as err:
        sac_update(_batch(), policy, np.random.default_rng(0), dump_dir=tmp_path)
    assert err.value.batch_id == 0
    assert (tmp_path / "sac_batch_000000.npz").exists()
