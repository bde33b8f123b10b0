# /core/types.py

"""
장면(scene), 에이전트, 차선 지도, 궤적 등 모듈 간에 공유되는 값 타입.
모든 좌표는 미터, 속도는 m/s, 각도는 라디안 단위입니다.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from core.errors import InputError

# 차선 라인 타입: 0 = 그려지지 않는 차선 중심선, 1 = 같은 방향 구분선, 2 = 반대 방향 구분선, 3 = 방향 없는 경계선
LINE_CENTER = 0
LINE_SAME_DIRECTION = 1
LINE_OPPOSITE_DIRECTION = 2
LINE_BOUNDARY = 3
LINE_TYPES = (LINE_CENTER, LINE_SAME_DIRECTION, LINE_OPPOSITE_DIRECTION, LINE_BOUNDARY)


def wrap_angle(theta):
    """ 각도를 (-pi, pi] 범위로 정규화합니다. 스칼라와 배열을 모두 지원합니다. """
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class AgentState:
    """ 월드 좌표계에서의 단일 차량 상태. """
    id: int
    x: float
    y: float
    vx: float
    vy: float
    heading: float
    length: float = 4.66
    width: float = 1.86
    kind: str = "vehicle"

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise InputError(f"agent {self.id}: length/width must be positive, got {self.length}/{self.width}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy], dtype=float)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.y, self.vx, self.vy, self.heading))

    def moved(self, **changes) -> AgentState:
        return replace(self, **changes)

    def corners(self) -> np.ndarray:
        """ 방향이 있는 사각형의 네 꼭짓점 (4, 2)을 반시계 방향으로 반환합니다. """
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.position


@dataclass(frozen=True)
class SceneFrame:
    """ 하나의 타임스탬프에서 관측된 모든 에이전트. """
    timestamp: float
    agents: tuple[AgentState, ...]
    scene_id: str = ""

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise InputError(f"scene {self.scene_id!r} t={self.timestamp}: duplicate agent ids")
        if not math.isfinite(self.timestamp) or not all(a.is_finite() for a in self.agents):
            raise InputError(f"scene {self.scene_id!r} t={self.timestamp}: non-finite values")

    def by_id(self) -> dict[int, AgentState]:
        return {a.id: a for a in self.agents}

    def get(self, agent_id: int) -> AgentState | None:
        for agent in self.agents:
            if agent.id == agent_id:
                return agent
        return None


@dataclass
class Scene:
    """ 시간순으로 정렬된 프레임 시퀀스. ego_id는 중심 차량을 지정합니다. """
    scene_id: str
    frames: list[SceneFrame]
    ego_id: int | None = None

    @property
    def dt(self) -> float:
        if len(self.frames) < 2:
            raise InputError(f"scene {self.scene_id!r} has fewer than 2 frames")
        return self.frames[1].timestamp - self.frames[0].timestamp

    def agent_ids(self) -> list[int]:
        return sorted({a.id for f in self.frames for a in f.agents})


@dataclass(frozen=True)
class LanePolyline:
    """ 차선 구분선 또는 차선 중심선. """
    points: np.ndarray
    line_type: int
    altitudes: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise InputError(f"polyline needs at least 2 points of shape (N, 2), got {pts.shape}")
        if self.line_type not in LINE_TYPES:
            raise InputError(f"unknown line type {self.line_type}")
        alt = np.zeros(len(pts)) if self.altitudes is None else np.asarray(self.altitudes, dtype=float)
        if alt.shape != (len(pts),):
            raise InputError(f"altitudes length {alt.shape} does not match {len(pts)} points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "altitudes", alt)


@dataclass
class LaneMap:
    polylines: list[LanePolyline] = field(default_factory=list)

    def centerlines(self) -> list[LanePolyline]:
        return [p for p in self.polylines if p.line_type == LINE_CENTER]

    def dividers(self) -> list[LanePolyline]:
        return [p for p in self.polylines if p.line_type != LINE_CENTER]

    def to_ego_frame(self, ego: AgentState) -> LaneMap:
        """ 모든 폴리라인을 ego 좌표계(전방, 좌측)로 변환한 새 지도를 반환합니다. """
        return LaneMap([
            LanePolyline(world_to_ego(p.points, ego), p.line_type, p.altitudes) for p in self.polylines
        ])


@dataclass
class Trajectory:
    """
    에이전트 하나의 궤적. 인덱스 0은 시작 상태입니다.

    Attributes:
        times (np.ndarray): (K+1,) 시각 [s], Δt 간격으로 엄격히 증가.
        positions (np.ndarray): (K+1, 2) 위치 [m].
        velocities (np.ndarray): (K+1, 2) 속도 [m/s].
        in_bounds (np.ndarray): (K+1,) 필드 조회가 격자 내부였는지 여부.
    """
    agent_id: int
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    in_bounds: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.in_bounds = np.asarray(self.in_bounds, dtype=bool)
        n = len(self.times)
        if not (len(self.positions) == len(self.velocities) == len(self.in_bounds) == n):
            raise InputError(f"trajectory {self.agent_id}: inconsistent lengths")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise InputError(f"trajectory {self.agent_id}: times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_ego(points, ego: AgentState) -> np.ndarray:
    """ 월드 좌표 점들을 ego 좌표계(x: 전방, y: 좌측)로 변환합니다. """
    pts = np.asarray(points, dtype=float)
    return (pts - ego.position) @ rotation(ego.heading)


def ego_to_world(points, ego: AgentState) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    return pts @ rotation(ego.heading).T + ego.position


def vectors_to_ego(vectors, ego: AgentState) -> np.ndarray:
    return np.asarray(vectors, dtype=float) @ rotation(ego.heading)


def vectors_to_world(vectors, ego: AgentState) -> np.ndarray:
    return np.asarray(vectors, dtype=float) @ rotation(ego.heading).T
