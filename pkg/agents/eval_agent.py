# /agents/eval_agent.py

import logging
from dataclasses import replace

import numpy as np
from tqdm import tqdm

from agents.sim_env import EpisodeConfig, EpisodeSource, SimEnv
from core.errors import InputError, UsageError
from core.events import EpisodeLog
from core.extract import ExtractionParams, ExtractionSample, extract_all, fit_params, mean_ade
from core.kinematics import KinematicBounds, analytical_predict
from core.lanes import lanes_of
from core.metrics import MetricReport, ade, comfort_score, event_rate, failure_rates, fde
from core.prednet import NetConfig, NetOutput, NetWeights, TrainingSample, forward, make_targets
from core.raster import build_net_input
from core.types import vectors_to_ego, world_to_ego

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS_S = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


class EvalAgent:
    """
    예측 성능(ADE/FDE)과 폐루프 시뮬레이션 실패율을 평가하는 에이전트.
    PredictionNet과 해석적 기준선을 같은 샘플, 같은 시드로 비교합니다.
    """
    def __init__(self, bounds: KinematicBounds = KinematicBounds()):
        self.bounds = bounds

    # --- 예측 평가 ---

    def _horizon_steps(self, horizons_s, dt: float, available: int) -> dict[float, int]:
        steps = {}
        for h in horizons_s:
            k = int(round(h / dt))
            if k < 1 or k > available:
                logger.warning("horizon %.2f s (%d steps) outside the predicted %d steps, skipped", h, k, available)
                continue
            steps[float(h)] = k
        return steps

    def _ground_truth(self, sample: TrainingSample, agent_id: int) -> np.ndarray | None:
        frames = [sample.history[-1], *sample.future]
        points = []
        for frame in frames:
            agent = frame.get(agent_id)
            if agent is None:
                return None
            points.append(agent.position)
        return world_to_ego(np.array(points), sample.ego)

    def evaluate_prediction(self, samples: list[TrainingSample], weights: NetWeights,
                            extraction: ExtractionParams | None = None,
                            horizons_s=DEFAULT_HORIZONS_S, progress: bool = True) -> tuple[MetricReport, MetricReport]:
        """
        보류 샘플에서 네트워크와 해석적 기준선의 ADE/FDE를 지평별로 계산합니다.
        두 예측 모두 예측 시점 ego 좌표계에서 실제 궤적과 비교합니다.

        Returns:
            (MetricReport, MetricReport): (PredictionNet, 기준선) 보고서.
        """
        if not samples:
            raise UsageError("evaluation needs at least one sample")
        config = weights.config
        extraction = extraction or ExtractionParams(dt=config.dt)
        steps = self._horizon_steps(horizons_s, config.dt, config.horizon)
        if not steps:
            raise InputError(f"no requested horizon fits the network horizon of {config.horizon} steps")

        errors = {"net": {h: ([], []) for h in steps}, "baseline": {h: ([], []) for h in steps}}
        for sample in tqdm(samples, desc="Evaluating", disable=not progress):
            ego = sample.ego
            frame = sample.history[-1]
            net_input = build_net_input(sample.history, sample.lanes, ego, config.grid, 0.0, None,
                                        config.history_len)
            outputs, _ = forward(net_input, weights)
            predicted = extract_all(frame, ego, outputs, extraction, config.grid)
            baseline = analytical_predict(frame.agents, lanes_of(sample.lanes), config.horizon, config.dt,
                                          frame.timestamp)
            for agent_id, traj in predicted.items():
                truth = self._ground_truth(sample, agent_id)
                if truth is None:
                    continue
                base = world_to_ego(baseline[agent_id].positions, ego)
                for h, k in steps.items():
                    errors["net"][h][0].append(ade(traj, truth, k))
                    errors["net"][h][1].append(fde(traj, truth, k))
                    errors["baseline"][h][0].append(ade(base, truth, k))
                    errors["baseline"][h][1].append(fde(base, truth, k))

        reports = []
        for label, per_h in errors.items():
            n = len(next(iter(per_h.values()))[0])
            if n == 0:
                raise InputError("no agent in the evaluation set was tracked over the full horizon")
            reports.append(MetricReport(
                label=label,
                ade_m={h: float(np.mean(a)) for h, (a, _) in per_h.items()},
                fde_m={h: float(np.mean(f)) for h, (_, f) in per_h.items()},
                n_samples=n,
                n_steps=len(samples),
            ))
            logger.info("%s: ADE %s", label, {f"{h:g}s": round(v, 3) for h, v in reports[-1].ade_m.items()})
        return reports[0], reports[1]

    # --- 추출 파라미터 적합 ---

    def extraction_samples(self, samples: list[TrainingSample], config: NetConfig,
                           weights: NetWeights | None = None, limit: int | None = None) -> list[ExtractionSample]:
        """
        샘플마다 필드 스택을 만들고, 전 구간에 등장하며 격자 안에 있는 에이전트를 적합 대상으로 모읍니다.
        weights가 없으면 실제 궤적으로 래스터화한 필드를 사용합니다.
        """
        out = []
        half = config.grid.center
        for sample in samples[:limit]:
            ego = sample.ego
            if weights is not None:
                net_input = build_net_input(sample.history, sample.lanes, ego, config.grid, 0.0, None,
                                            config.history_len)
                outputs, _ = forward(net_input, weights)
            else:
                t = make_targets(sample.history, sample.future, ego, config, with_past=False)
                outputs = NetOutput(t.occupancy, t.velocity, t.backtrace)
            for agent in sample.history[-1].agents:
                truth = self._ground_truth(sample, agent.id)
                if truth is None:
                    continue
                rc = config.grid.ego_to_pixel(truth[0])
                if not (0.0 <= rc[0] <= 2 * half and 0.0 <= rc[1] <= 2 * half):
                    continue
                out.append(ExtractionSample(outputs, truth[0], vectors_to_ego(agent.velocity, ego), truth))
        logger.info("collected %d extraction samples from %d windows", len(out), len(samples[:limit]))
        return out

    def fit_extraction(self, samples: list[TrainingSample], config: NetConfig, weights: NetWeights | None = None,
                       limit: int | None = None, maxiter: int = 200,
                       fatol: float = 1e-4) -> tuple[ExtractionParams, float, float]:
        """
        Returns:
            (ExtractionParams, float, float): 적합된 파라미터, 적합 후 평균 ADE, 초기점(보정 0)의 평균 ADE.
        """
        fit_samples = self.extraction_samples(samples, config, weights, limit)
        if not fit_samples:
            raise UsageError("no agent is tracked over a full window; nothing to fit")
        initial = mean_ade(fit_samples, ExtractionParams(dt=config.dt), config.grid)
        params, value = fit_params(fit_samples, config.dt, config.grid, maxiter, fatol)
        logger.info("extraction fit: mean ADE %.4f m -> %.4f m", initial, value)
        return params, value, initial

    # --- 시뮬레이션 평가 ---

    def simulate(self, sources: list[EpisodeSource], config: EpisodeConfig, weights: NetWeights | None = None,
                 extraction: ExtractionParams | None = None, progress: bool = True) -> list[EpisodeLog]:
        """
        각 소스로 에피소드 하나씩 실행합니다. i번째 에피소드의 시드는 config.seed + i입니다.
        """
        if not sources:
            raise UsageError("simulate needs at least one episode source")
        logs = []
        for i, source in enumerate(tqdm(sources, desc=f"Simulating ({config.stepper})", disable=not progress)):
            env = SimEnv(replace(config, seed=config.seed + i), weights, extraction, self.bounds)
            logs.append(env.run(source))
        return logs

    def comfort(self, logs: list[EpisodeLog], segment_s: float = 2.0, jerk_threshold: float = 2.0) -> float | None:
        """ 구간 하나 이상을 덮는 에피소드들의 ego 승차감 점수 평균 [%]. """
        scores = []
        for log in logs:
            try:
                scores.append(comfort_score(log.ego_accels(), log.dt, segment_s, jerk_threshold))
            except InputError:
                logger.debug("episode %s too short for a comfort segment", log.episode_id)
        return float(np.mean(scores)) if scores else None

    def simulation_report(self, logs: list[EpisodeLog], reactive_logs: list[EpisodeLog] | None = None,
                          label: str = "", segment_s: float = 2.0, jerk_threshold: float = 2.0) -> MetricReport:
        offroad, collision = failure_rates(logs)
        reactive = event_rate(reactive_logs, "collision") if reactive_logs else None
        return MetricReport(
            label=label or logs[0].stepper,
            comfort_pct=self.comfort(logs, segment_s, jerk_threshold),
            offroad_pct=offroad,
            collision_pct=collision,
            reactive_collision_pct=reactive,
            n_samples=len(logs),
            n_steps=sum(len(log.controlled_steps) for log in logs),
        )

    def summarize_for_feedback(self, reports: list[MetricReport]) -> dict:
        """
        여러 보고서를 비교하여 가장 좋은 결과를 요약합니다.

        Returns:
            dict: 가장 긴 지평에서 FDE가 가장 낮은 라벨, 충돌률이 가장 낮은 라벨 등 요약 정보.
        """
        if not reports:
            return {"message": "평가된 보고서가 없습니다."}
        summary: dict = {"num_reports": len(reports)}
        with_fde = [r for r in reports if r.fde_m]
        if with_fde:
            horizon = max(max(r.fde_m) for r in with_fde)
            ranked = sorted((r for r in with_fde if horizon in r.fde_m), key=lambda r: r.fde_m[horizon])
            summary["horizon_s"] = horizon
            summary["best_prediction"] = ranked[0].label
            summary["best_fde_m"] = ranked[0].fde_m[horizon]
            if len(ranked) > 1 and ranked[-1].fde_m[horizon] > 0:
                summary["fde_improvement_pct"] = 100.0 * (1.0 - ranked[0].fde_m[horizon] / ranked[-1].fde_m[horizon])
        with_sim = [r for r in reports if r.collision_pct is not None]
        if with_sim:
            safest = min(with_sim, key=lambda r: (r.collision_pct, r.offroad_pct))
            summary["safest_stepper"] = safest.label
            summary["collision_pct"] = safest.collision_pct
            summary["offroad_pct"] = safest.offroad_pct
        return summary
