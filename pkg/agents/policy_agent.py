# /agents/policy_agent.py

"""
희귀 사건 과제(끼어들기, 급제동)에서 SAC ego 정책을 학습하고 평가하는 에이전트.
PredictionNet 가중치는 시뮬레이터의 상태 전이와 잠재 상태 계산에만 쓰이며 변경되지 않습니다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from agents.scenario_agent import ScenarioAgent
from agents.sim_env import EpisodeConfig, SimEnv, SimState
from clients.checkpoint_client import CheckpointClient
from core.errors import UsageError
from core.events import EpisodeLog
from core.extract import ExtractionParams
from core.kinematics import KinematicBounds
from core.optimizer import RewardWeightOptimizer
from core.policy import (PolicyWeights, ReplayBuffer, RLConfig, SacOptimizers, act, features, init_policy,
                         kinematic_observation, reward, sac_update)
from core.prednet import NetWeights

logger = logging.getLogger(__name__)

# 과제별 실패(희귀 사건) 정의
FAILURE_EVENTS = {"cut_in": ("cut_in",), "harsh_brake": ("collision",)}
RARE_EVENTS = {"cut_in": ("cut_in", "collision"), "harsh_brake": ("collision",)}


def _observation(env: SimEnv, state: SimState, prev_accel: float, use_kinematics: bool) -> np.ndarray | None:
    if not use_kinematics:
        return None
    gap, closing = env.lead_gap(state)
    return kinematic_observation(state.ego.speed, prev_accel, gap, closing)


def _ego_accel(state: SimState) -> float:
    record = state.log.records[-1].agent(state.log.ego_id)
    return float(record["a"]) if record else 0.0


class SacController:
    """ 학습된 정책의 평균 행동으로 ego 가속도를 고르는 제어기. """

    def __init__(self, weights: PolicyWeights):
        self.weights = weights

    def __call__(self, env: SimEnv, state: SimState) -> float:
        kin = _observation(env, state, _ego_accel(state), self.weights.config.use_kinematics)
        obs = features(state.latent.h, self.weights, kin)
        return act(obs, self.weights, mode="mean")[0]


@dataclass
class AccController:
    """
    간격/상대속도 기반 적응형 순항 제어기 (비교 기준선).
    a = k_gap·(gap - (min_gap + time_gap·v)) - k_closing·closing, 선행 차량이 없으면 설정 속도 추종.
    """
    time_gap: float = 1.5
    min_gap: float = 5.0
    k_gap: float = 0.3
    k_closing: float = 0.8
    k_speed: float = 0.5
    set_speed: float = 14.0
    a_min: float = -6.0
    a_max: float = 4.0

    def __call__(self, env: SimEnv, state: SimState) -> float:
        ego = state.ego
        gap, closing = env.lead_gap(state)
        accel = self.k_speed * (self.set_speed - ego.speed)
        if gap is not None:
            accel = min(accel, self.k_gap * (gap - self.min_gap - self.time_gap * ego.speed) - self.k_closing * closing)
        return float(np.clip(accel, self.a_min, self.a_max))


@dataclass
class PolicyTrainResult:
    weights: PolicyWeights
    returns: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    diagnostics: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


class PolicyAgent:
    def __init__(self, scenario_agent: ScenarioAgent, checkpoint_client: CheckpointClient):
        self.scenario_agent = scenario_agent
        self.checkpoint_client = checkpoint_client

    def make_env(self, task: str, net_weights: NetWeights, seed: int, episode: EpisodeConfig | None = None,
                 extraction: ExtractionParams | None = None, bounds: KinematicBounds = KinematicBounds()):
        """
        과제 에피소드 하나의 (환경, 시나리오)를 만듭니다. 같은 seed는 같은 에피소드를 만듭니다.
        """
        if task not in FAILURE_EVENTS:
            raise UsageError(f"unknown task {task!r}; choose from {sorted(FAILURE_EVENTS)}")
        base = episode or EpisodeConfig(dt=net_weights.config.dt)
        config = replace(base, seed=seed, stepper="prednet", terminate_on=self.scenario_agent.terminate_on(task))
        replay, _, _ = config.steps()
        source = self.scenario_agent.make_scenario(task, np.random.default_rng([seed, 7]), replay, config.dt)
        return SimEnv(config, net_weights, extraction, bounds, task=task), source

    def train_policy(self, task: str, net_weights: NetWeights, config: RLConfig, episodes: int, seed: int = 0,
                     out_dir: str | Path | None = None, checkpoint_every: int = 50, episode: EpisodeConfig | None = None,
                     extraction: ExtractionParams | None = None, progress: bool = True) -> PolicyTrainResult:
        """
        재현 버퍼 SAC로 정책을 학습합니다. 에피소드는 희귀 사건이나 max_steps에서 끝납니다.

        Returns:
            PolicyTrainResult: 정책 가중치와 에피소드별 반환값(보상 곡선).
        """
        rng = np.random.default_rng(seed)
        latent_shape = net_weights.config.latent_shape
        weights = init_policy(config, latent_shape, rng)
        buffer = ReplayBuffer(config.buffer_capacity, latent_shape)
        optimizers = SacOptimizers.create(config)
        result = PolicyTrainResult(weights)
        out_dir = Path(out_dir) if out_dir is not None else None
        rare_kinds = RARE_EVENTS[task]
        transitions = 0

        bar = tqdm(range(episodes), desc=f"SAC {task}", disable=not progress)
        for ep in bar:
            env, source = self.make_env(task, net_weights, seed * 100003 + ep, episode, extraction)
            state = env.reset(source)
            prev_accel = _ego_accel(state)
            kin = _observation(env, state, prev_accel, config.use_kinematics)
            h = state.latent.h
            ret, length = 0.0, 0
            while not state.terminated and length < config.max_steps:
                if transitions < config.warmup_steps:
                    action = float(rng.uniform(config.a_min, config.a_max))
                else:
                    action = act(features(h, weights, kin), weights, mode="sample", rng=rng)[0]
                prev_speed = state.ego.speed
                state, events, _ = env.step(state, action)
                accel = _ego_accel(state)
                gap, _ = env.lead_gap(state)
                rare = any(e.kind in rare_kinds for e in events)
                r = reward(accel - prev_accel, state.ego.speed - prev_speed, gap, rare, config)
                state.log.records[-1].reward = r

                kin_next = _observation(env, state, accel, config.use_kinematics)
                done = rare
                buffer.add(h, kin if kin is not None else np.zeros(4), action, r, state.latent.h,
                           kin_next if kin_next is not None else np.zeros(4), done)
                h, kin, prev_accel = state.latent.h, kin_next, accel
                ret += r
                length += 1
                transitions += 1

                if transitions >= config.warmup_steps and len(buffer) >= config.batch_size:
                    for _ in range(config.updates_per_step):
                        diag = sac_update(buffer.sample(config.batch_size, rng), weights, rng, optimizers, out_dir)
                    result.diagnostics.append({"critic_loss": diag.critic_loss, "policy_loss": diag.policy_loss,
                                               "entropy": diag.entropy, "temperature": diag.temperature})

            result.returns.append(ret)
            result.lengths.append(length)
            bar.set_postfix(ret=f"{ret:.2f}", len=length)
            logger.debug("episode %d: return %.3f over %d steps", ep, ret, length)
            if out_dir is not None and (ep + 1) % checkpoint_every == 0:
                path = out_dir / "checkpoints" / f"policy_{ep + 1:05d}.pnet"
                self.checkpoint_client.save_policy(weights, path, meta={"episode": ep + 1, "task": task})
                result.checkpoints.append(path)
        return result

    def run_episodes(self, task: str, controller, net_weights: NetWeights, n_episodes: int = 10,
                     seeds: list[int] | None = None, episode: EpisodeConfig | None = None,
                     extraction: ExtractionParams | None = None) -> list[EpisodeLog]:
        seeds = seeds if seeds is not None else list(range(n_episodes))
        logs = []
        for s in seeds[:n_episodes]:
            env, source = self.make_env(task, net_weights, s, episode, extraction)
            logs.append(env.run(source, controller))
        return logs

    def evaluate_policy(self, task: str, controller, net_weights: NetWeights, n_episodes: int = 10,
                        seeds: list[int] | None = None, episode: EpisodeConfig | None = None,
                        extraction: ExtractionParams | None = None) -> float:
        """
        실패한 에피소드 비율 [%]. controller가 None이면 ego도 네트워크를 따라 진행합니다(모방만 하는 ego).

        실패는 끼어들기 과제에서 끼어들기 발생, 급제동 과제에서 충돌 발생입니다.
        """
        if n_episodes < 1:
            raise UsageError("n_episodes must be at least 1")
        logs = self.run_episodes(task, controller, net_weights, n_episodes, seeds, episode, extraction)
        failures = sum(1 for log in logs if any(log.events(kind) for kind in FAILURE_EVENTS[task]))
        pct = 100.0 * failures / len(logs)
        logger.info("%s: %d/%d failed episodes (%.0f%%)", task, failures, len(logs), pct)
        return pct

    def tune_rewards(self, task: str, net_weights: NetWeights, config: RLConfig, episodes: int,
                     eval_episodes: int = 10, seed: int = 0, init_points: int = 3, n_iter: int = 5,
                     pbounds: dict | None = None, episode: EpisodeConfig | None = None) -> tuple[dict, list[dict]]:
        """
        베이지안 최적화로 보상 가중치 α1..α3을 고릅니다. 점수는 실패율이 낮을수록, 평가 반환값이 클수록 높습니다.

        Returns:
            (dict, list[dict]): 최적 가중치와 시도 기록.
        """
        eval_seeds = [10_000 + seed + i for i in range(eval_episodes)]

        def evaluate(alphas: dict) -> float:
            trial = replace(config, **alphas)
            trained = self.train_policy(task, net_weights, trial, episodes, seed, episode=episode, progress=False)
            logs = self.run_episodes(task, SacController(trained.weights), net_weights, eval_episodes, eval_seeds,
                                     episode)
            failed = sum(1 for log in logs if any(log.events(kind) for kind in FAILURE_EVENTS[task]))
            mean_return = float(np.mean(trained.returns[-max(1, episodes // 5):]))
            return -100.0 * failed / len(logs) + 1e-3 * mean_return

        optimizer = RewardWeightOptimizer(evaluate, random_state=42)
        best = optimizer.optimize(pbounds, init_points=init_points, n_iter=n_iter)
        return best, optimizer.trials


__all__ = ["AccController", "PolicyAgent", "PolicyTrainResult", "SacController"]
