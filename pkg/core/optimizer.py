# /core/optimizer.py

from __future__ import annotations

import logging
from typing import Callable

import numpy as np
from bayes_opt import BayesianOptimization
from scipy.optimize import minimize

from core.errors import UsageError

logger = logging.getLogger(__name__)


class ExtractionFitter:
    """
    넬더-미드(Nelder-Mead) 심플렉스 방법으로 궤적 추출 파라미터를 탐색하는 클래스.
    결과는 초기점보다 나빠지지 않습니다.
    """
    def __init__(self, maxiter: int = 200, fatol: float = 1e-4, initial_step: np.ndarray | float = 0.05):
        self.maxiter = maxiter
        self.fatol = fatol
        self.initial_step = initial_step
        self.objective: Callable[[np.ndarray], float] | None = None
        self.history: list[float] = []

    def _objective_function(self, theta: np.ndarray) -> float:
        """
        심플렉스의 목적 함수. 수치가 깨지는 점은 큰 값으로 대체합니다.
        """
        value = float(self.objective(theta))
        if not np.isfinite(value):
            value = 1e9
        self.history.append(value)
        return value

    def _initial_simplex(self, x0: np.ndarray) -> np.ndarray:
        step = np.broadcast_to(np.asarray(self.initial_step, dtype=float), x0.shape)
        simplex = np.repeat(x0[None], len(x0) + 1, axis=0)
        simplex[1:] += np.diag(step)
        return simplex

    def optimize(self, objective: Callable[[np.ndarray], float], x0) -> tuple[np.ndarray, float]:
        """
        Args:
            objective (Callable): 파라미터 벡터 → 평균 변위 오차 [m].
            x0 (np.ndarray): 초기점.

        Returns:
            (np.ndarray, float): 찾은 최적 파라미터와 목적 함수 값.
        """
        self.objective = objective
        self.history = []
        x0 = np.asarray(x0, dtype=float)
        f0 = self._objective_function(x0)

        result = minimize(
            self._objective_function, x0, method="Nelder-Mead",
            options={"maxiter": self.maxiter, "fatol": self.fatol, "xatol": 1e-6,
                     "initial_simplex": self._initial_simplex(x0)},
        )
        logger.info("simplex fit: %d evaluations, objective %.4f -> %.4f", result.nfev, f0, result.fun)

        # 초기점이 더 좋으면 초기점을 반환
        if not result.fun < f0:
            return x0, f0
        return np.asarray(result.x, dtype=float), float(result.fun)


class RewardWeightOptimizer:
    """
    베이지안 최적화를 사용하여 보상 가중치 (α1, α2, α3)를 탐색하는 클래스.
    """
    DEFAULT_BOUNDS = {
        "alpha1": (-0.5, 0.0),
        "alpha2": (-0.5, 0.0),
        "alpha3": (0.0, 1.0),
    }

    def __init__(self, evaluate: Callable[[dict], float], random_state: int = 42):
        """
        Args:
            evaluate (Callable): 가중치 딕셔너리 → 점수 (클수록 좋음).
            random_state (int): 탐색 난수 시드.
        """
        self.evaluate = evaluate
        self.random_state = random_state
        self.trials: list[dict] = []

    def _objective_function(self, alpha1: float, alpha2: float, alpha3: float) -> float:
        weights = {"alpha1": alpha1, "alpha2": alpha2, "alpha3": alpha3}
        score = float(self.evaluate(weights))
        self.trials.append({**weights, "score": score})
        logger.info("reward weights %s -> score %.4f", {k: round(v, 4) for k, v in weights.items()}, score)
        return score

    def optimize(self, pbounds: dict | None = None, init_points: int = 3, n_iter: int = 5) -> dict:
        """
        Returns:
            dict: 가장 높은 점수를 낸 가중치.
        """
        pbounds = pbounds or self.DEFAULT_BOUNDS
        if set(pbounds) != set(self.DEFAULT_BOUNDS):
            raise UsageError(f"pbounds must name exactly {sorted(self.DEFAULT_BOUNDS)}")

        optimizer = BayesianOptimization(
            f=self._objective_function,
            pbounds=pbounds,
            random_state=self.random_state,
            verbose=0,
        )

        # init_points: 랜덤 탐색 횟수, n_iter: 베이지안 최적화 반복 횟수
        optimizer.maximize(init_points=init_points, n_iter=n_iter)

        return optimizer.max["params"]
