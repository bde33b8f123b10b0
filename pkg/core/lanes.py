# /core/lanes.py

"""
차선 중심선 기하 연산. shapely LineString 위에서 호장(arc length) 매개변수화를 제공합니다.
"""

from __future__ import annotations

import numpy as np
import shapely
from shapely.geometry import LineString

from core.types import LanePolyline, LaneMap, wrap_angle


class Lane:
    """ 호장 s로 매개변수화된 차선 중심선. """

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float)
        self.line = LineString(self.points)
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.seg_dir = seg / np.maximum(self.seg_len, 1e-12)[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    @classmethod
    def from_polyline(cls, polyline: LanePolyline) -> Lane:
        return cls(polyline.points)

    def _segment(self, s) -> np.ndarray:
        idx = np.searchsorted(self.cum, s, side="right") - 1
        return np.clip(idx, 0, len(self.seg_len) - 1)

    def project(self, xy) -> np.ndarray | float:
        """ 점(들)의 중심선 위 최근접 호장 위치를 반환합니다. """
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        s = shapely.line_locate_point(self.line, shapely.points(pts))
        return float(s[0]) if np.ndim(xy) == 1 else np.asarray(s, dtype=float)

    def point_at(self, s) -> np.ndarray:
        """
        호장 s의 점을 반환합니다. 범위를 벗어나면 끝 구간의 접선 방향으로 직선 외삽합니다.
        """
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        idx = self._segment(s_arr)
        out = self.points[idx] + self.seg_dir[idx] * (s_arr - self.cum[idx])[:, None]
        return out[0] if np.ndim(s) == 0 else out

    def tangent_at(self, s) -> np.ndarray:
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = self.seg_dir[self._segment(s_arr)]
        return out[0] if np.ndim(s) == 0 else out

    def heading_at(self, s) -> float | np.ndarray:
        t = self.tangent_at(s)
        return np.arctan2(t[..., 1], t[..., 0])

    def distance(self, xy) -> np.ndarray | float:
        pts = np.atleast_2d(np.asarray(xy, dtype=float))
        d = shapely.distance(self.line, shapely.points(pts))
        return float(d[0]) if np.ndim(xy) == 1 else np.asarray(d, dtype=float)

    def signed_offset(self, xy) -> float:
        """ 좌측이 양수인 횡방향 오프셋 [m]. """
        p = np.asarray(xy, dtype=float)
        s = self.project(p)
        t = self.tangent_at(s)
        d = p - self.point_at(s)
        return float(t[0] * d[1] - t[1] * d[0])


def lanes_of(lane_map: LaneMap) -> list[Lane]:
    return [Lane.from_polyline(p) for p in lane_map.centerlines()]


def associate(lanes: list[Lane], xy, heading: float, max_lateral: float = 3.0,
              max_heading: float = np.pi / 4) -> tuple[Lane, float] | None:
    """
    횡거리와 진행 방향 조건을 만족하는 가장 가까운 차선을 찾습니다.

    Returns:
        (Lane, s) | None: 연관된 차선과 투영 호장. 조건을 만족하는 차선이 없으면 None.
    """
    best = None
    best_dist = np.inf
    for lane in lanes:
        dist = lane.distance(xy)
        if dist > max_lateral or dist >= best_dist:
            continue
        s = lane.project(xy)
        if abs(wrap_angle(heading - lane.heading_at(s))) > max_heading:
            continue
        best, best_dist = (lane, s), dist
    return best
