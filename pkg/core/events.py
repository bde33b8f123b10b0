# /core/events.py

"""
시뮬레이션 사건(충돌, 이탈, 끼어들기, 급제동) 검출기와 에피소드 기록 형식.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from core.errors import InputError, SchemaError
from core.lanes import Lane
from core.types import AgentState, SceneFrame, wrap_angle

EVENT_KINDS = ("collision", "offroad", "cut_in", "harsh_brake")


@dataclass(frozen=True)
class SimEvent:
    kind: str
    step: int
    agents: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise InputError(f"unknown event kind {self.kind!r}")


# --- 충돌 ---

def _axes(corners: np.ndarray) -> np.ndarray:
    edges = np.diff(corners[:3], axis=0)
    return np.stack([-edges[:, 1], edges[:, 0]], axis=1)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """ 분리축 정리(SAT)로 두 방향 사각형 (4, 2)의 겹침을 판정합니다. 접촉도 겹침으로 봅니다. """
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def detect_collision(agents) -> list[tuple[int, int]]:
    """
    서로 겹치는 에이전트 쌍 (작은 id, 큰 id) 목록.
    """
    agents = sorted(agents, key=lambda a: a.id)
    corners = {a.id: a.corners() for a in agents}
    pairs = []
    for a, b in combinations(agents, 2):
        reach = 0.5 * (math.hypot(a.length, a.width) + math.hypot(b.length, b.width))
        if math.hypot(a.x - b.x, a.y - b.y) > reach:
            continue
        if boxes_overlap(corners[a.id], corners[b.id]):
            pairs.append((a.id, b.id))
    return pairs


# --- 도로 이탈 ---

def detect_offroad(agent: AgentState, lanes: list[Lane], road_halfwidth: float = 2.0) -> bool:
    """ 차량 중심이 모든 차선 중심선에서 road_halfwidth보다 멀면 True. """
    if not road_halfwidth > 0:
        raise InputError(f"road_halfwidth must be positive, got {road_halfwidth}")
    return all(lane.distance(agent.position) > road_halfwidth for lane in lanes)


# --- 끼어들기 ---

def _lane_coords(lane: Lane, agent: AgentState) -> tuple[float, float]:
    s = lane.project(agent.position)
    return s, lane.signed_offset(agent.position)


def cut_in_agents(frames: list[SceneFrame], ego_id: int, ego_lane: Lane, heading_threshold: float = 0.15,
                  lane_halfwidth: float = 1.75) -> list[int]:
    """
    직전 프레임에서 ego 차선 밖에 있다가 마지막 프레임에서 ego 차선 안으로 들어온 에이전트.
    ego보다 앞, 선행 차량보다 뒤에 있어야 하며 차선 방향 대비 진행 방향 편차가 임계값을 넘어야 합니다.
    """
    if len(frames) < 2:
        raise InputError("cut-in detection needs at least 2 frames")
    prev, cur = frames[-2], frames[-1]
    ego = cur.get(ego_id)
    if ego is None:
        return []
    s_ego, _ = _lane_coords(ego_lane, ego)

    before = prev.by_id()
    in_lane_prev = {}
    for agent in prev.agents:
        if agent.id != ego_id:
            s, d = _lane_coords(ego_lane, agent)
            in_lane_prev[agent.id] = (s, abs(d) <= lane_halfwidth)

    out = []
    for agent in cur.agents:
        if agent.id == ego_id or agent.id not in before:
            continue
        s, d = _lane_coords(ego_lane, agent)
        was_in_lane = in_lane_prev[agent.id][1]
        if was_in_lane or abs(d) > lane_halfwidth or s <= s_ego:
            continue
        lead_s = [ps for aid, (ps, inside) in in_lane_prev.items() if inside and aid != agent.id and ps > s_ego]
        if lead_s and s >= min(lead_s):
            continue
        deviation = abs(wrap_angle(agent.heading - ego_lane.heading_at(s)))
        if deviation > heading_threshold:
            out.append(agent.id)
    return out


def detect_cut_in(frames: list[SceneFrame], ego_id: int, ego_lane: Lane, heading_threshold: float = 0.15,
                  lane_halfwidth: float = 1.75) -> bool:
    return bool(cut_in_agents(frames, ego_id, ego_lane, heading_threshold, lane_halfwidth))


# --- 에피소드 기록 ---

@dataclass
class StepRecord:
    step: int
    controlled: bool
    agents: list[dict]
    events: list[SimEvent] = field(default_factory=list)
    reward: float | None = None

    def has(self, kind: str) -> bool:
        return any(e.kind == kind for e in self.events)

    def agent(self, agent_id: int) -> dict | None:
        for a in self.agents:
            if a["id"] == agent_id:
                return a
        return None


@dataclass
class EpisodeLog:
    """
    한 에피소드의 스텝별 기록. JSON Lines로 저장되며 첫 줄은 에피소드 머리말입니다.
    """
    episode_id: str
    ego_id: int
    dt: float
    stepper: str = "prednet"
    task: str = ""
    seed: int | None = None
    records: list[StepRecord] = field(default_factory=list)

    @property
    def controlled_steps(self) -> list[StepRecord]:
        return [r for r in self.records if r.controlled]

    def ego_accels(self) -> np.ndarray:
        return np.array([r.agent(self.ego_id)["a"] for r in self.controlled_steps if r.agent(self.ego_id)])

    def events(self, kind: str | None = None) -> list[SimEvent]:
        return [e for r in self.records for e in r.events if kind is None or e.kind == kind]

    def to_lines(self) -> list[str]:
        head = {"type": "episode", "episode_id": self.episode_id, "ego_id": self.ego_id, "dt": self.dt,
                "stepper": self.stepper, "task": self.task, "seed": self.seed}
        lines = [json.dumps(head)]
        for r in self.records:
            rec = {"type": "step", "step": r.step, "controlled": r.controlled, "agents": r.agents,
                   "events": [asdict(e) for e in r.events], "reward": r.reward}
            lines.append(json.dumps(rec))
        return lines

    def save(self, path: str | Path):
        Path(path).write_text("\n".join(self.to_lines()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> EpisodeLog:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines:
            raise SchemaError(f"{path}: empty episode log", location="line 1")
        line_no = 1
        try:
            head = json.loads(lines[0])
            log = cls(head["episode_id"], int(head["ego_id"]), float(head["dt"]), head.get("stepper", ""),
                      head.get("task", ""), head.get("seed"))
            for line_no, line in enumerate(lines[1:], start=2):
                rec = json.loads(line)
                events = [SimEvent(e["kind"], int(e["step"]), tuple(e["agents"])) for e in rec["events"]]
                log.records.append(StepRecord(int(rec["step"]), bool(rec["controlled"]), rec["agents"], events,
                                              rec.get("reward")))
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{path}: malformed episode log ({e})", location=f"line {line_no}") from e
        return log
