# /core/extract.py

"""
예측 필드 스택에서 에이전트별 궤적을 복원하는 추출 점화식과 그 파라미터 적합.

한 스텝 k (1..T):
    p ← p + vΔt
    α ← σ(w_α·Ô_k[p] + b_α)
    p ← p + α·corr_p·[V̂_k[p]; Ŵ_k[p]]
    v' ← V̂_k[p] + α·corr_v·[V̂_k[p]; Ŵ_k[p]]
    v ← α·v' + (1-α)·v
필드 조회가 격자 밖이면 그 스텝의 α는 0이고 in_bounds가 꺼집니다.
좌표는 모두 ego 좌표계 미터입니다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit

from core.errors import InputError, UsageError
from core.kinematics import lane_following
from core.lanes import Lane
from core.metrics import ade
from core.optimizer import ExtractionFitter
from core.prednet import NetOutput
from core.raster import GridSpec, sample_field
from core.types import AgentState, SceneFrame, Trajectory, vectors_to_ego, world_to_ego

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["agent_id", "step", "t_s", "x_m", "y_m", "vx_mps", "vy_mps", "in_bounds"]


@dataclass
class ExtractionParams:
    w_alpha: float = 1.0
    b_alpha: float = 0.0
    corr_p: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    corr_v: np.ndarray = field(default_factory=lambda: np.zeros((2, 4)))
    dt: float = 1.0 / 6.0

    def __post_init__(self):
        self.corr_p = np.asarray(self.corr_p, dtype=float).reshape(2, 4)
        self.corr_v = np.asarray(self.corr_v, dtype=float).reshape(2, 4)
        if not self.dt > 0:
            raise InputError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(self.to_vector())):
            raise InputError("extraction params must be finite")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.w_alpha, self.b_alpha], self.corr_p.ravel(), self.corr_v.ravel()])

    @classmethod
    def from_vector(cls, theta, dt: float) -> ExtractionParams:
        theta = np.asarray(theta, dtype=float)
        return cls(float(theta[0]), float(theta[1]), theta[2:10], theta[10:18], dt)

    def to_dict(self) -> dict:
        return {"w_alpha": self.w_alpha, "b_alpha": self.b_alpha, "corr_p": self.corr_p.tolist(),
                "corr_v": self.corr_v.tolist(), "dt": self.dt}

    @classmethod
    def from_dict(cls, data: dict) -> ExtractionParams:
        return cls(data["w_alpha"], data["b_alpha"], data["corr_p"], data["corr_v"], data["dt"])


def extract_trajectory(p0, v0, outputs: NetOutput, params: ExtractionParams, grid: GridSpec = GridSpec(),
                       agent_id: int = -1, t0: float = 0.0, steps: int | None = None) -> Trajectory:
    """
    초기 위치/속도 (ego 좌표계)에서 출발하여 T개의 예측 필드를 따라 궤적을 복원합니다.

    Returns:
        Trajectory: 길이 T+1 (인덱스 0 = 초기 상태).
    """
    p = np.array(p0, dtype=float)
    v = np.array(v0, dtype=float)
    if p.shape != (2,) or v.shape != (2,) or not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
        raise InputError(f"agent {agent_id}: initial position/velocity must be finite 2-vectors")
    steps = outputs.horizon if steps is None else min(steps, outputs.horizon)
    dt = params.dt

    positions = [p.copy()]
    velocities = [v.copy()]
    flags = [True]
    for k in range(1, steps + 1):
        p = p + v * dt
        values, inside = sample_field(outputs.fields(k), grid.ego_to_pixel(p))
        if inside:
            alpha = float(expit(params.w_alpha * values[0] + params.b_alpha))
            feats = values[1:5]
            p = p + alpha * (params.corr_p @ feats)
            v_hat = values[1:3] + alpha * (params.corr_v @ feats)
            v = alpha * v_hat + (1.0 - alpha) * v
        positions.append(p.copy())
        velocities.append(v.copy())
        flags.append(inside)
    times = t0 + dt * np.arange(steps + 1)
    return Trajectory(agent_id, times, np.array(positions), np.array(velocities), np.array(flags))


def extract_all(frame: SceneFrame, ego: AgentState, outputs: NetOutput, params: ExtractionParams,
                grid: GridSpec = GridSpec()) -> dict[int, Trajectory]:
    """
    프레임의 모든 에이전트(격자 안에 있는)에 대해 추출을 수행합니다. 결과는 ego 좌표계입니다.
    """
    half = grid.center
    out = {}
    for agent in frame.agents:
        p0 = world_to_ego(agent.position, ego)
        rc = grid.ego_to_pixel(p0)
        if not (0.0 <= rc[0] <= 2 * half and 0.0 <= rc[1] <= 2 * half):
            logger.debug("agent %d outside the grid, skipped", agent.id)
            continue
        out[agent.id] = extract_trajectory(p0, vectors_to_ego(agent.velocity, ego), outputs, params, grid,
                                           agent_id=agent.id, t0=frame.timestamp)
    return out


def extend_analytic(traj: Trajectory, lanes: list[Lane], horizon_s: float = 5.0) -> Trajectory:
    """
    마지막 추출 상태에서 해석적 예측기로 궤적을 horizon_s까지 연장합니다.
    lanes는 궤적과 같은 좌표계여야 합니다.
    """
    dt = float(traj.times[1] - traj.times[0]) if len(traj) > 1 else None
    if dt is None:
        raise InputError("cannot extend a trajectory with fewer than 2 samples")
    span = traj.times[-1] - traj.times[0]
    extra = int(round((horizon_s - span) / dt))
    if extra <= 0:
        return traj
    pos, vel = lane_following(traj.positions[-1], traj.velocities[-1], lanes, extra, dt)
    times = traj.times[-1] + dt * np.arange(1, extra + 1)
    return Trajectory(
        traj.agent_id,
        np.concatenate([traj.times, times]),
        np.vstack([traj.positions, pos]),
        np.vstack([traj.velocities, vel]),
        np.concatenate([traj.in_bounds, np.ones(extra, dtype=bool)]),
    )


def trajectories_frame(trajectories) -> pd.DataFrame:
    rows = []
    for traj in trajectories:
        for k in range(len(traj)):
            rows.append((traj.agent_id, k, traj.times[k], traj.positions[k, 0], traj.positions[k, 1],
                         traj.velocities[k, 0], traj.velocities[k, 1], int(traj.in_bounds[k])))
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def write_trajectories_csv(trajectories, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trajectories_frame(trajectories).to_csv(path, index=False, float_format="%.6f")
    return path


@dataclass
class ExtractionSample:
    outputs: NetOutput
    p0: np.ndarray
    v0: np.ndarray
    truth: np.ndarray      # (T+1, 2) ego 좌표계 실제 위치


def mean_ade(samples: list[ExtractionSample], params: ExtractionParams, grid: GridSpec) -> float:
    errors = []
    for s in samples:
        traj = extract_trajectory(s.p0, s.v0, s.outputs, params, grid)
        errors.append(ade(traj, s.truth, traj.n_steps))
    return float(np.mean(errors))


def fit_params(samples: list[ExtractionSample], dt: float, grid: GridSpec = GridSpec(), maxiter: int = 200,
               fatol: float = 1e-4) -> tuple[ExtractionParams, float]:
    """
    학습 세트 평균 ADE를 최소화하도록 18개 추출 파라미터를 심플렉스 방법으로 적합합니다.
    탐색은 보정 0, (w_α, b_α) = (1, 0)에서 시작하며 그보다 나쁜 결과는 반환하지 않습니다.

    Returns:
        (ExtractionParams, float): 파라미터와 달성한 평균 ADE [m].
    """
    if not samples:
        raise UsageError("fit_params needs at least one sample")
    initial = ExtractionParams(dt=dt)

    def objective(theta):
        try:
            return mean_ade(samples, ExtractionParams.from_vector(theta, dt), grid)
        except InputError:
            return np.inf

    step = np.concatenate([[0.5, 0.5], np.full(16, 0.05)])
    fitter = ExtractionFitter(maxiter=maxiter, fatol=fatol, initial_step=step)
    theta, value = fitter.optimize(objective, initial.to_vector())
    return ExtractionParams.from_vector(theta, dt), value
