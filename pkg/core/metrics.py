# /core/metrics.py

"""
궤적 예측 지표(ADE/FDE), 승차감 점수, 시뮬레이션 실패율.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from core.errors import InputError
from core.events import EpisodeLog
from core.types import Trajectory


def _positions(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.positions
    return np.asarray(traj, dtype=float).reshape(-1, 2)


def _pointwise(pred, gt, horizon_steps: int) -> np.ndarray:
    p, g = _positions(pred), _positions(gt)
    if horizon_steps < 1:
        raise InputError(f"horizon_steps must be >= 1, got {horizon_steps}")
    if len(p) < horizon_steps + 1 or len(g) < horizon_steps + 1:
        raise InputError(f"trajectories of length {len(p)} and {len(g)} do not cover {horizon_steps} steps")
    d = p[1:horizon_steps + 1] - g[1:horizon_steps + 1]
    return np.hypot(d[:, 0], d[:, 1])


def ade(pred, gt, horizon_steps: int) -> float:
    """ 1..horizon_steps 스텝의 평균 유클리드 거리 [m]. 인덱스 0은 시작 상태입니다. """
    return float(np.mean(_pointwise(pred, gt, horizon_steps)))


def fde(pred, gt, horizon_steps: int) -> float:
    """ horizon_steps 스텝에서의 유클리드 거리 [m]. """
    return float(_pointwise(pred, gt, horizon_steps)[-1])


def comfort_score(accel, dt: float, segment_s: float = 2.0, jerk_threshold: float = 2.0) -> float:
    """
    가속도 기록을 segment_s 길이 구간으로 나누어, 평균 |저크|가 임계값 이하인 구간의 비율(%)을 계산합니다.
    끝의 불완전한 구간은 버립니다.
    """
    accel = np.asarray(accel, dtype=float)
    jerk = np.abs(np.diff(accel)) / dt
    seg = max(int(round(segment_s / dt)), 1)
    n_seg = len(jerk) // seg
    if n_seg < 1:
        raise InputError(f"acceleration trace of {len(accel)} samples is shorter than one {segment_s} s segment")
    means = jerk[:n_seg * seg].reshape(n_seg, seg).mean(axis=1)
    return 100.0 * float(np.sum(means <= jerk_threshold)) / n_seg


def event_rate(logs: list[EpisodeLog], kind: str) -> float:
    """ 모든 제어 스텝 중 해당 사건이 있었던 스텝의 비율(%). """
    total = sum(len(log.controlled_steps) for log in logs)
    if total == 0:
        return 0.0
    hits = sum(1 for log in logs for r in log.controlled_steps if r.has(kind))
    return 100.0 * hits / total


def failure_rates(logs: list[EpisodeLog]) -> tuple[float, float]:
    """
    Returns:
        (offroad_pct, collision_pct): 모든 제어 스텝 대비 사건 스텝의 비율.
    """
    if not logs:
        raise InputError("failure_rates needs at least one episode log")
    return event_rate(logs, "offroad"), event_rate(logs, "collision")


@dataclass
class MetricReport:
    label: str = ""
    ade_m: dict[float, float] = field(default_factory=dict)
    fde_m: dict[float, float] = field(default_factory=dict)
    comfort_pct: float | None = None
    offroad_pct: float | None = None
    collision_pct: float | None = None
    reactive_collision_pct: float | None = None
    n_samples: int = 0
    n_steps: int = 0

    def __post_init__(self):
        for name in ("comfort_pct", "offroad_pct", "collision_pct", "reactive_collision_pct"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise InputError(f"{name} must be a percentage, got {value}")
        if self.n_samples < 0 or self.n_steps < 0:
            raise InputError("sample counts must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ade_m"] = {f"{h:g}": v for h, v in self.ade_m.items()}
        out["fde_m"] = {f"{h:g}": v for h, v in self.fde_m.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for h in sorted(self.ade_m):
            rows.append({"metric": f"ade@{h:g}s", "value": self.ade_m[h]})
            if h in self.fde_m:
                rows.append({"metric": f"fde@{h:g}s", "value": self.fde_m[h]})
        for name in ("comfort_pct", "offroad_pct", "collision_pct", "reactive_collision_pct"):
            if getattr(self, name) is not None:
                rows.append({"metric": name, "value": getattr(self, name)})
        rows.append({"metric": "n_samples", "value": self.n_samples})
        rows.append({"metric": "n_steps", "value": self.n_steps})
        return pd.DataFrame(rows, columns=["metric", "value"])

    def to_table(self) -> str:
        """ 키-값 텍스트 표. """
        title = f"# {self.label}\n" if self.label else ""
        return title + self.to_frame().to_string(index=False, float_format=lambda v: f"{v:.4f}")


def compare_reports(reports: list[MetricReport]) -> pd.DataFrame:
    """ 여러 보고서를 지표 × 라벨 표로 합칩니다. """
    frames = [r.to_frame().set_index("metric")["value"].rename(r.label or f"run{i}") for i, r in enumerate(reports)]
    return pd.concat(frames, axis=1)
