# /clients/synth_client.py

"""
책상 규모 학습/평가용 합성 주행 데이터 생성기.

도로는 직선 또는 원호 다차로이며, 차량은 차선을 따라 간격 비례 추종 규칙으로 주행합니다.
세로 방향 적분은 중점 규칙(s' = s + (v + v')/2·Δt)을 따르므로 생성된 프레임은 이 관계를 정확히 만족합니다.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from core.config import SynthSection
from core.errors import ConfigError
from core.types import (LINE_BOUNDARY, LINE_CENTER, LINE_SAME_DIRECTION, AgentState, LaneMap, LanePolyline, Scene,
                        SceneFrame)

logger = logging.getLogger(__name__)

# 원호 도로를 직선 도로와 겹치지 않게 떨어뜨리는 거리 [m]
ARC_ROAD_OFFSET = np.array([0.0, 1000.0])


@dataclass(frozen=True)
class Road:
    """ 차선 i의 호장 s 위치를 계산하는 도로 기하. curvature = 0이면 직선. """
    n_lanes: int
    lane_width: float
    curvature: float = 0.0
    origin: tuple = (0.0, 0.0)

    def pose(self, lane: int, s: float, offset: float = 0.0) -> tuple[np.ndarray, float]:
        """ (위치, 진행 방향). offset은 좌측 양수 횡방향 이동입니다. """
        origin = np.asarray(self.origin, dtype=float)
        d = lane * self.lane_width + offset
        if self.curvature == 0.0:
            return origin + np.array([s, d]), 0.0
        radius = 1.0 / self.curvature
        r = radius - d
        theta = s / r
        center = origin + np.array([0.0, radius])
        return center + r * np.array([math.sin(theta), -math.cos(theta)]), theta

    def lane_map(self, length: float, spacing: float = 1.0) -> LaneMap:
        s = np.arange(-50.0, length + spacing, spacing)
        polylines = []

        def line(offset_lanes: float, line_type: int):
            pts = []
            for si in s:
                if self.curvature == 0.0:
                    pts.append(self.pose(0, si, offset_lanes * self.lane_width)[0])
                else:
                    # 원호 위의 같은 중심각으로 배치하여 선들이 동심원이 되도록 함
                    radius = 1.0 / self.curvature
                    r = radius - offset_lanes * self.lane_width
                    theta = si / radius
                    center = np.asarray(self.origin) + np.array([0.0, radius])
                    pts.append(center + r * np.array([math.sin(theta), -math.cos(theta)]))
            polylines.append(LanePolyline(np.array(pts), line_type))

        for lane in range(self.n_lanes):
            line(lane, LINE_CENTER)
        line(-0.5, LINE_BOUNDARY)
        for lane in range(self.n_lanes - 1):
            line(lane + 0.5, LINE_SAME_DIRECTION)
        line(self.n_lanes - 0.5, LINE_BOUNDARY)
        return LaneMap(polylines)


@dataclass
class _Vehicle:
    id: int
    lane: int
    s: float
    v: float
    v_des: float
    length: float
    width: float
    brake_from: int = -1
    brake_until: int = -1


class SynthClient:
    """
    합성 장면 생성 클라이언트. 같은 시드는 같은 데이터를 만듭니다.
    """
    def __init__(self, config: SynthSection | None = None, dt: float = 1.0 / 6.0):
        self.config = config or SynthSection()
        self.dt = dt

    def roads(self) -> list[Road]:
        c = self.config
        straight = Road(c.n_lanes, c.lane_width)
        arc = Road(c.n_lanes, c.lane_width, c.curvature, tuple(ARC_ROAD_OFFSET))
        if c.road == "straight":
            return [straight]
        if c.road == "arc":
            return [arc]
        return [straight, arc]

    def lane_capacity(self) -> int:
        c = self.config
        per_lane = int((c.road_length - 20.0) // (c.min_gap + 5.0))
        return per_lane * c.n_lanes

    def _acceleration(self, veh: _Vehicle, leader: _Vehicle | None, step: int) -> float:
        c = self.config
        if veh.brake_from <= step < veh.brake_until:
            return -c.brake_decel
        accel = c.speed_gain * (veh.v_des - veh.v)
        if leader is not None:
            gap = leader.s - veh.s - 0.5 * (leader.length + veh.length)
            follow = c.follow_gain * (gap - c.min_gap - veh.v) + 0.5 * (leader.v - veh.v)
            accel = min(accel, follow)
        return float(np.clip(accel, -c.a_max, c.a_max))

    def _place(self, rng: np.random.Generator, n_agents: int) -> list[_Vehicle]:
        c = self.config
        lanes = rng.integers(0, c.n_lanes, size=n_agents)
        vehicles = []
        next_id = 0
        for lane in range(c.n_lanes):
            count = int(np.sum(lanes == lane))
            if count == 0:
                continue
            slack = max(c.road_length - 20.0 - count * (c.min_gap + 5.0), 0.0)
            gaps = rng.dirichlet(np.ones(count + 1)) * slack
            s = 10.0 + gaps[0]
            for j in range(count):
                length = float(rng.uniform(4.2, 5.0))
                v = float(rng.uniform(c.speed_min, c.speed_max))
                vehicles.append(_Vehicle(next_id, lane, s, v, float(rng.uniform(c.speed_min, c.speed_max)),
                                         length, float(rng.uniform(1.7, 2.0))))
                next_id += 1
                s += c.min_gap + 5.0 + gaps[j + 1]
        return vehicles

    def make_scene(self, scene_id: str, road: Road, rng: np.random.Generator) -> Scene:
        c = self.config
        vehicles = self._place(rng, c.n_agents)
        if rng.random() < c.brake_prob:
            braker = vehicles[int(rng.integers(0, len(vehicles)))]
            braker.brake_from = int(rng.integers(1, max(c.frames - 1, 2)))
            braker.brake_until = braker.brake_from + int(rng.integers(3, 12))

        mid = c.road_length / 2.0
        ego = min((v for v in vehicles if v.lane == vehicles[0].lane), key=lambda v: abs(v.s - mid))

        frames = []
        for step in range(c.frames):
            agents = []
            for veh in vehicles:
                pos, heading = road.pose(veh.lane, veh.s)
                agents.append(AgentState(veh.id, float(pos[0]), float(pos[1]), veh.v * math.cos(heading),
                                         veh.v * math.sin(heading), heading, veh.length, veh.width))
            frames.append(SceneFrame(step * self.dt, tuple(agents), scene_id))

            by_lane: dict[int, list[_Vehicle]] = {}
            for veh in vehicles:
                by_lane.setdefault(veh.lane, []).append(veh)
            accels = {}
            for lane_vehicles in by_lane.values():
                lane_vehicles.sort(key=lambda v: v.s)
                for j, veh in enumerate(lane_vehicles):
                    leader = lane_vehicles[j + 1] if j + 1 < len(lane_vehicles) else None
                    accels[veh.id] = self._acceleration(veh, leader, step)
            for veh in vehicles:
                v_next = max(veh.v + accels[veh.id] * self.dt, 0.0)
                veh.s += 0.5 * (veh.v + v_next) * self.dt
                veh.v = v_next
        return Scene(scene_id, frames, ego.id)

    def synth_dataset(self, seed: int) -> tuple[list[Scene], LaneMap]:
        """
        설정에 따라 장면들과 하나의 차선 지도를 생성합니다.

        Raises:
            ConfigError: 차량 수가 차선 수용량을 넘는 경우.
        """
        c = self.config
        if c.n_agents > self.lane_capacity():
            raise ConfigError(f"{c.n_agents} agents exceed lane capacity {self.lane_capacity()} "
                              f"({c.n_lanes} lanes x {c.road_length} m at min_gap {c.min_gap} m)")
        rng = np.random.default_rng(seed)
        roads = self.roads()
        polylines = []
        for road in roads:
            polylines.extend(road.lane_map(c.road_length + 200.0).polylines)
        scenes = [self.make_scene(f"synth_{i:04d}", roads[i % len(roads)], rng) for i in range(c.n_scenes)]
        logger.info("generated %d synthetic scenes (%s road, %d agents each)", len(scenes), c.road, c.n_agents)
        return scenes, LaneMap(polylines)
