# /core/kinematics.py

"""
유니사이클(unicycle) 운동 모델과 해석적(등속·차선 추종) 기준 예측기.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from core.errors import InputError
from core.lanes import Lane, associate
from core.types import AgentState, Trajectory, wrap_angle

# 이 속력 미만의 목표는 정지로 보고 진행 방향을 유지합니다 [m/s]
STATIONARY_SPEED = 0.1


@dataclass(frozen=True)
class KinematicBounds:
    a_max: float = 8.0       # m/s²
    omega_max: float = 1.0   # rad/s
    v_min: float = 0.0

    def __post_init__(self):
        if not (self.a_max > 0 and self.omega_max > 0) or self.v_min < 0:
            raise InputError(f"invalid kinematic bounds: {self}")


@dataclass(frozen=True)
class UnicycleState:
    x: float
    y: float
    heading: float
    speed: float

    @classmethod
    def from_agent(cls, agent: AgentState) -> UnicycleState:
        return cls(agent.x, agent.y, wrap_angle(agent.heading), agent.speed)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def apply_to(self, agent: AgentState) -> AgentState:
        return agent.moved(x=self.x, y=self.y, heading=self.heading,
                           vx=self.speed * math.cos(self.heading), vy=self.speed * math.sin(self.heading))


def unicycle_step(state: UnicycleState, accel: float, yaw_rate: float, dt: float,
                  bounds: KinematicBounds = KinematicBounds()) -> UnicycleState:
    """
    한 스텝 진행합니다. 입력은 한계로 잘리고, 위치는 갱신된 속력과 진행 방향으로 적분합니다.
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    accel = min(max(accel, -bounds.a_max), bounds.a_max)
    yaw_rate = min(max(yaw_rate, -bounds.omega_max), bounds.omega_max)
    speed = max(bounds.v_min, state.speed + accel * dt)
    heading = wrap_angle(state.heading + yaw_rate * dt)
    return UnicycleState(
        x=state.x + speed * math.cos(heading) * dt,
        y=state.y + speed * math.sin(heading) * dt,
        heading=heading,
        speed=speed,
    )


def fit_unicycle(prev: UnicycleState, target_xy, dt: float,
                 bounds: KinematicBounds = KinematicBounds()) -> tuple[float, float, UnicycleState]:
    """
    한 스텝 뒤 목표 위치로 가는 (a, ω)를 역산합니다.

    목표 진행 방향은 변위 방향, 목표 속력은 변위 / Δt 입니다. 목표 속력이 0.1 m/s 미만이면
    진행 방향을 유지합니다. 한계 안의 목표는 정확히 도달합니다.

    Returns:
        (a, ω, UnicycleState): 잘린 제어 입력과 적용 후 상태.
    """
    if not dt > 0:
        raise InputError(f"dt must be positive, got {dt}")
    target = np.asarray(target_xy, dtype=float)
    dx, dy = float(target[0] - prev.x), float(target[1] - prev.y)
    speed = math.hypot(dx, dy) / dt
    heading = prev.heading if speed < STATIONARY_SPEED else math.atan2(dy, dx)

    accel = min(max((speed - prev.speed) / dt, -bounds.a_max), bounds.a_max)
    yaw_rate = min(max(wrap_angle(heading - prev.heading) / dt, -bounds.omega_max), bounds.omega_max)
    return accel, yaw_rate, unicycle_step(prev, accel, yaw_rate, dt, bounds)


def constant_velocity(position, velocity, horizon: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """ 직선 등속 외삽. 인덱스 k-1이 k스텝 뒤입니다. """
    k = np.arange(1, horizon + 1, dtype=float)[:, None]
    v = np.asarray(velocity, dtype=float)
    return np.asarray(position, dtype=float) + k * dt * v, np.repeat(v[None], horizon, axis=0)


def lane_following(position, velocity, lanes: list[Lane], horizon: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """
    가까운 차선 중심선을 따라 등속으로 진행합니다. 횡방향 오프셋은 유지합니다.
    연관되는 차선이 없으면 직선 등속으로 진행합니다.
    """
    position = np.asarray(position, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    speed = float(np.hypot(*velocity))
    match = associate(lanes, position, math.atan2(velocity[1], velocity[0])) if speed > 0 else None
    if match is None:
        return constant_velocity(position, velocity, horizon, dt)
    lane, s0 = match
    offset = lane.signed_offset(position)
    s = s0 + speed * dt * np.arange(1, horizon + 1, dtype=float)
    tangent = lane.tangent_at(s)
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    return lane.point_at(s) + offset * normal, speed * tangent


def analytical_predict(agents, lanes: list[Lane], horizon_steps: int, dt: float,
                       t0: float = 0.0) -> dict[int, Trajectory]:
    """
    등속·차선 추종 기준선 예측.

    Args:
        agents (list[AgentState]): 현재 시점 에이전트 (월드 좌표).
        lanes (list[Lane]): 차선 중심선.
        horizon_steps (int): 예측 스텝 수.
        dt (float): 스텝 간격 [s].

    Returns:
        dict[int, Trajectory]: 에이전트 id → 길이 horizon_steps + 1의 궤적 (인덱스 0 = 현재 상태).
    """
    if horizon_steps < 1:
        raise InputError(f"horizon_steps must be >= 1, got {horizon_steps}")
    out = {}
    times = t0 + dt * np.arange(horizon_steps + 1)
    for agent in agents:
        pos, vel = lane_following(agent.position, agent.velocity, lanes, horizon_steps, dt)
        out[agent.id] = Trajectory(
            agent.id, times,
            np.vstack([agent.position, pos]),
            np.vstack([agent.velocity, vel]),
            np.ones(horizon_steps + 1, dtype=bool),
        )
    return out
