# /tests/test_optimizer.py

import numpy as np
import pytest

from core.errors import UsageError
from core.optimizer import ExtractionFitter, RewardWeightOptimizer


def test_simplex_finds_quadratic_minimum():
    target = np.array([0.5, -1.0, 2.0])
    fitter = ExtractionFitter(maxiter=2000, fatol=1e-10, initial_step=0.5)
    x, f = fitter.optimize(lambda t: float(np.sum((t - target) ** 2)), np.zeros(3))
    np.testing.assert_allclose(x, target, atol=1e-3)
    assert f < 1e-6
    assert fitter.history[0] == pytest.approx(np.sum(target ** 2))


def test_simplex_never_returns_worse_than_start():
    # 초기점 밖은 모두 수치적으로 깨지는 목적 함수
    def objective(t):
        return 1.0 if np.allclose(t, 0.0) else np.nan

    fitter = ExtractionFitter(maxiter=50)
    x, f = fitter.optimize(objective, np.zeros(4))
    np.testing.assert_array_equal(x, np.zeros(4))
    assert f == 1.0
    assert max(fitter.history) == 1e9


def test_reward_weight_search_records_trials():
    def evaluate(w):
        return -((w["alpha1"] + 0.1) ** 2 + (w["alpha2"] + 0.2) ** 2 + (w["alpha3"] - 0.5) ** 2)

    opt = RewardWeightOptimizer(evaluate, random_state=1)
    best = opt.optimize(init_points=3, n_iter=2)
    assert set(best) == {"alpha1", "alpha2", "alpha3"}
    assert len(opt.trials) == 5
    assert evaluate(best) == pytest.approx(max(t["score"] for t in opt.trials))
    for trial in opt.trials:
        assert -0.5 <= trial["alpha1"] <= 0.0
        assert 0.0 <= trial["alpha3"] <= 1.0


def test_reward_weight_bounds_must_name_all_weights():
    opt = RewardWeightOptimizer(lambda w: 0.0)
    with pytest.raises(UsageError):
        opt.optimize(pbounds={"alpha1": (-1.0, 0.0)})
