# /core/raster.py

"""
월드 좌표계 장면을 ego 중심 다채널 격자로 변환하는 래스터화 연산.

격자 규약:
    - ego는 격자 중앙 ((size_px - 1) / 2, (size_px - 1) / 2)에 위치합니다.
    - ego의 진행 방향은 0번 행(위쪽)을 향합니다. 좌측은 작은 열 번호입니다.
    - 연속 격자 좌표 (row, col)에서 정수 좌표는 픽셀 중심입니다.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from core.errors import InputError
from core.types import (LINE_CENTER, LINE_TYPES, AgentState, LaneMap, LanePolyline, SceneFrame,
                        vectors_to_ego, world_to_ego)

logger = logging.getLogger(__name__)

# ego 좌표계 벡터 필드는 마이크로미터(초당) 단위로 반올림해 저장
FIELD_DECIMALS = 6


@dataclass(frozen=True)
class GridSpec:
    size_px: int = 128
    resolution: float = 0.5

    def __post_init__(self):
        if self.size_px <= 0 or not self.resolution > 0:
            raise InputError(f"invalid grid spec: size_px={self.size_px}, resolution={self.resolution}")

    @property
    def center(self) -> float:
        return (self.size_px - 1) / 2.0

    @property
    def fov_m(self) -> float:
        return self.size_px * self.resolution

    def ego_to_pixel(self, xy) -> np.ndarray:
        """ ego 좌표 (전방, 좌측) [m] → 연속 격자 좌표 (row, col). """
        xy = np.asarray(xy, dtype=float)
        return np.stack([self.center - xy[..., 0] / self.resolution,
                         self.center - xy[..., 1] / self.resolution], axis=-1)

    def pixel_to_ego(self, rc) -> np.ndarray:
        rc = np.asarray(rc, dtype=float)
        return np.stack([(self.center - rc[..., 0]) * self.resolution,
                         (self.center - rc[..., 1]) * self.resolution], axis=-1)

    def pixel_centers(self) -> np.ndarray:
        """ (H, W, 2) 모든 픽셀 중심의 ego 좌표. 읽기 전용 캐시를 반환합니다. """
        return _pixel_centers(self.size_px, self.resolution)


@lru_cache(maxsize=8)
def _pixel_centers(size_px: int, resolution: float) -> np.ndarray:
    idx = np.arange(size_px, dtype=float)
    rr, cc = np.meshgrid(idx, idx, indexing="ij")
    center = (size_px - 1) / 2.0
    out = np.stack([(center - rr) * resolution, (center - cc) * resolution], axis=-1)
    out.setflags(write=False)
    return out


@dataclass
class MapRaster:
    line_type: np.ndarray   # (H, W) int
    altitude: np.ndarray    # (H, W) float


@dataclass
class OccupancyRaster:
    values: np.ndarray      # (H, W) in [0, 1]


@dataclass
class VelocityField:
    values: np.ndarray      # (2, H, W) m/s, ego 좌표 성분


@dataclass
class BacktraceField:
    values: np.ndarray      # (2, H, W) m
    missing_pixels: int = 0


@dataclass
class NetInput:
    dynamic: np.ndarray     # (T̄, 3, H, W)
    static: np.ndarray      # (1, 2, H, W)

    @property
    def history_len(self) -> int:
        return self.dynamic.shape[0]


def _check_finite(agents, ego: AgentState):
    if not ego.is_finite():
        raise InputError(f"ego pose is not finite: {ego}")
    for agent in agents:
        if not agent.is_finite():
            raise InputError(f"agent {agent.id} pose is not finite")


def rasterize_owners(agents, ego: AgentState, spec: GridSpec) -> tuple[np.ndarray, dict[int, AgentState]]:
    """
    각 픽셀을 덮는 에이전트의 id 맵을 계산합니다 (-1 = 비어 있음).
    여러 에이전트가 겹치면 중심이 가장 가까운 에이전트, 거리가 같으면 작은 id가 차지합니다.
    """
    _check_finite(agents, ego)
    n = spec.size_px
    owner = np.full((n, n), -1, dtype=np.int64)
    best_d2 = np.full((n, n), np.inf)
    centers = spec.pixel_centers()
    by_id = {}

    for agent in agents:
        by_id[agent.id] = agent
        c_ego = world_to_ego(agent.position, ego)
        rc = spec.ego_to_pixel(c_ego)
        radius = 0.5 * math.hypot(agent.length, agent.width) / spec.resolution + 1.0
        r0, r1 = max(int(math.floor(rc[0] - radius)), 0), min(int(math.ceil(rc[0] + radius)) + 1, n)
        c0, c1 = max(int(math.floor(rc[1] - radius)), 0), min(int(math.ceil(rc[1] + radius)) + 1, n)
        if r0 >= r1 or c0 >= c1:
            continue  # 시야 밖

        phi = agent.heading - ego.heading
        cos_p, sin_p = math.cos(phi), math.sin(phi)
        local = centers[r0:r1, c0:c1] - c_ego
        u = local[..., 0] * cos_p + local[..., 1] * sin_p
        v = -local[..., 0] * sin_p + local[..., 1] * cos_p
        inside = (np.abs(u) <= agent.length / 2.0) & (np.abs(v) <= agent.width / 2.0)
        d2 = local[..., 0] ** 2 + local[..., 1] ** 2

        win_best = best_d2[r0:r1, c0:c1]
        win_owner = owner[r0:r1, c0:c1]
        better = inside & ((d2 < win_best) | ((d2 == win_best) & ((win_owner < 0) | (agent.id < win_owner))))
        win_best[better] = d2[better]
        win_owner[better] = agent.id

    return owner, by_id


def rasterize_agents(agents, ego: AgentState, spec: GridSpec) -> tuple[OccupancyRaster, VelocityField]:
    """
    에이전트들을 방향이 있는 사각형으로 그려 점유 격자와 속도 필드를 만듭니다.

    Args:
        agents (list[AgentState]): 월드 좌표계 에이전트.
        ego (AgentState): 격자 중심 차량.
        spec (GridSpec): 격자 정의.

    Returns:
        (OccupancyRaster, VelocityField): 점유 {0, 1}, ego 좌표계 속도 [m/s].
    """
    owner, by_id = rasterize_owners(agents, ego, spec)
    occ = (owner >= 0).astype(float)
    vel = np.zeros((2, spec.size_px, spec.size_px))
    for agent_id in np.unique(owner[owner >= 0]):
        mask = owner == agent_id
        v = vectors_to_ego(by_id[int(agent_id)].velocity, ego)
        vel[0][mask] = v[0]
        vel[1][mask] = v[1]
    return OccupancyRaster(occ), VelocityField(np.round(vel, FIELD_DECIMALS))


def _clip_segment(p0: np.ndarray, p1: np.ndarray, lo: float, hi: float) -> tuple[float, float] | None:
    """ Liang-Barsky 방식으로 선분 p0→p1을 [lo, hi]^2 상자에 잘라 매개변수 구간을 반환합니다. """
    t0, t1 = 0.0, 1.0
    d = p1 - p0
    for k in range(2):
        for p, q in ((-d[k], p0[k] - lo), (d[k], hi - p0[k])):
            if p == 0:
                if q < 0:
                    return None
                continue
            t = q / p
            if p < 0:
                t0 = max(t0, t)
            else:
                t1 = min(t1, t)
            if t0 > t1:
                return None
    return t0, t1


def draw_segment(rc0, rc1, size_px: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    연속 격자 좌표 선분을 1픽셀 폭의 연결된 선(DDA)으로 래스터화합니다.

    Returns:
        (rows, cols, t): 격자 내부 픽셀 인덱스와 원래 선분 위의 매개변수 t ∈ [0, 1].
    """
    p0, p1 = np.asarray(rc0, dtype=float), np.asarray(rc1, dtype=float)
    clipped = _clip_segment(p0, p1, -0.5, size_px - 0.5)
    if clipped is None:
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    ta, tb = clipped
    a, b = p0 + ta * (p1 - p0), p0 + tb * (p1 - p0)
    # 잘린 끝점은 픽셀 경계 위에 놓이므로 먼저 정수 픽셀로 반올림
    r0, c0 = np.clip(np.floor(a + 0.5).astype(int), 0, size_px - 1)
    r1, c1 = np.clip(np.floor(b + 0.5).astype(int), 0, size_px - 1)
    dr, dc = r1 - r0, c1 - c0
    n = max(abs(dr), abs(dc))
    if n == 0:
        return np.array([r0]), np.array([c0]), np.array([ta])
    i = np.arange(n + 1)
    # 정수 DDA: 주축은 픽셀마다 정확히 1칸, 부축은 반올림
    rows = r0 + (2 * i * dr + n) // (2 * n)
    cols = c0 + (2 * i * dc + n) // (2 * n)
    t = ta + (i / n) * (tb - ta)
    return rows, cols, t


def rasterize_map(lanes, ego: AgentState, spec: GridSpec) -> MapRaster:
    """
    차선 구분선을 라인 타입/고도 2채널 격자로 그립니다. 중심선(타입 0)은 그리지 않습니다.
    고도는 정점 사이에서 선형 보간됩니다.
    """
    polylines = lanes.polylines if isinstance(lanes, LaneMap) else list(lanes)
    n = spec.size_px
    line_type = np.zeros((n, n), dtype=np.int64)
    altitude = np.zeros((n, n))
    for poly in polylines:
        if poly.line_type not in LINE_TYPES:
            raise InputError(f"unknown line type {poly.line_type}")
        if poly.line_type == LINE_CENTER:
            continue
        rc = spec.ego_to_pixel(world_to_ego(poly.points, ego))
        for k in range(len(rc) - 1):
            rows, cols, t = draw_segment(rc[k], rc[k + 1], n)
            if rows.size == 0:
                continue
            line_type[rows, cols] = poly.line_type
            altitude[rows, cols] = poly.altitudes[k] + t * (poly.altitudes[k + 1] - poly.altitudes[k])
    return MapRaster(line_type, altitude)


def make_backtrace_targets(frame_t: SceneFrame, frame_t1: SceneFrame, ego: AgentState,
                           spec: GridSpec) -> BacktraceField:
    """
    t+1 시점의 각 점유 픽셀에서 해당 차량의 t 시점 중심을 가리키는 벡터 [m]를 계산합니다.
    t 시점에 없는 에이전트의 픽셀은 0으로 두고 개수를 보고합니다.
    """
    owner, _ = rasterize_owners(frame_t1.agents, ego, spec)
    prev = frame_t.by_id()
    centers = spec.pixel_centers()
    out = np.zeros((2, spec.size_px, spec.size_px))
    missing = 0
    for agent_id in np.unique(owner[owner >= 0]):
        mask = owner == agent_id
        agent_t = prev.get(int(agent_id))
        if agent_t is None:
            missing += int(mask.sum())
            continue
        c_t = world_to_ego(agent_t.position, ego)
        diff = c_t - centers[mask]
        out[0][mask] = diff[:, 0]
        out[1][mask] = diff[:, 1]
    if missing:
        logger.warning("backtrace: %d pixels belong to agents absent at t=%.3f", missing, frame_t.timestamp)
    return BacktraceField(np.round(out, FIELD_DECIMALS), missing)


def check_uniform(frames: list[SceneFrame], tol: float = 1e-6) -> float:
    """ 프레임 간격이 균일한지 확인하고 Δt를 반환합니다. """
    if len(frames) < 2:
        return 0.0
    stamps = np.array([f.timestamp for f in frames])
    steps = np.diff(stamps)
    dt = float(steps[0])
    if dt <= 0 or np.max(np.abs(steps - dt)) > tol * max(1.0, abs(dt)):
        raise InputError(f"frames are not uniformly spaced in time: steps={steps.tolist()}")
    return dt


def build_net_input(history: list[SceneFrame], lanes: LaneMap, ego: AgentState, spec: GridSpec,
                    map_dropout_prob: float = 0.1, rng: np.random.Generator | None = None,
                    history_len: int = 6) -> NetInput:
    """
    과거 T̄개 프레임과 차선 지도로 네트워크 입력 텐서를 만듭니다.

    Args:
        history (list[SceneFrame]): 오래된 순서의 과거 프레임 (길이 = history_len).
        lanes (LaneMap): 월드 좌표 차선 지도.
        ego (AgentState): 예측 시점 t의 ego 상태 (모든 프레임의 기준 좌표계).
        spec (GridSpec): 격자 정의.
        map_dropout_prob (float): 샘플 전체의 정적 채널을 0으로 만들 확률.
        rng (np.random.Generator): 지도 드롭아웃 난수원.
        history_len (int): 기대하는 과거 길이 T̄.

    Returns:
        NetInput: dynamic (T̄, 3, H, W), static (1, 2, H, W).
    """
    if len(history) != history_len:
        raise InputError(f"history has {len(history)} frames, expected {history_len}")
    check_uniform(history)
    rng = rng if rng is not None else np.random.default_rng(0)

    n = spec.size_px
    dynamic = np.zeros((history_len, 3, n, n))
    for k, frame in enumerate(history):
        occ, vel = rasterize_agents(frame.agents, ego, spec)
        dynamic[k, 0] = occ.values
        dynamic[k, 1:] = vel.values

    static = np.zeros((1, 2, n, n))
    # 드롭아웃 여부와 관계없이 난수를 한 번 소비하여 결정성을 유지
    if rng.random() >= map_dropout_prob:
        m = rasterize_map(lanes, ego, spec)
        static[0, 0] = m.line_type
        static[0, 1] = m.altitude
    return NetInput(dynamic, static)


def sample_field(field, position) -> tuple[np.ndarray, bool]:
    """
    연속 격자 좌표에서 필드를 쌍선형 보간합니다.
    격자 밖 좌표는 경계로 고정(clamp)되며 in_bounds = False가 됩니다.

    Args:
        field: (H, W) 또는 (C, H, W) 배열, 또는 .values를 가진 래스터.
        position: (row, col) 연속 격자 좌표.

    Returns:
        (np.ndarray, bool): (C,) 보간 값과 격자 내부 여부.
    """
    values = getattr(field, "values", field)
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[None]
    _, h, w = values.shape
    r, c = float(position[0]), float(position[1])
    in_bounds = bool(0.0 <= r <= h - 1 and 0.0 <= c <= w - 1)
    coords = np.array([[r], [c]])
    out = np.array([
        ndimage.map_coordinates(ch, coords, order=1, mode="nearest", prefilter=False)[0] for ch in values
    ])
    return out, in_bounds
