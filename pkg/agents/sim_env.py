# /agents/sim_env.py

"""
PredictionNet(또는 등속 기준선)을 상태 전이 함수로 쓰는 에피소드형 reset/step 시뮬레이터.

에피소드는 기록 재생 구간(replay_s)으로 시작해 과거 버퍼와 잠재 상태를 채운 뒤,
제어 구간(control_s) 동안 매 스텝 네트워크 한 스텝 예측 → 궤적 추출 → 유니사이클 적합으로 에이전트를 진행시킵니다.
모든 래스터화는 직전 스텝의 상태를 사용합니다. ego 행동은 먼저 적분되어 다음 스텝 입력에 나타납니다.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from core.config import SimConfig
from core.errors import ConfigError, InputError, UsageError
from core.events import EpisodeLog, SimEvent, StepRecord, cut_in_agents, detect_collision, detect_offroad
from core.extract import ExtractionParams, extract_trajectory
from core.kinematics import KinematicBounds, UnicycleState, fit_unicycle, unicycle_step
from core.lanes import Lane, associate, lanes_of
from core.prednet import LatentState, NetOutput, NetWeights, forward
from core.raster import build_net_input
from core.types import (AgentState, LaneMap, Scene, SceneFrame, ego_to_world, vectors_to_ego, world_to_ego,
                        wrap_angle)

logger = logging.getLogger(__name__)

STEPPERS = ("prednet", "baseline")


def whole_steps(seconds: float, dt: float, name: str) -> int:
    """ seconds / dt가 정수(1e-9 이내)가 아니면 ConfigError. """
    ratio = seconds / dt
    steps = round(ratio)
    if abs(ratio - steps) > 1e-9:
        raise ConfigError(f"{name} = {seconds} s is not a whole number of {dt} s steps ({ratio})")
    return int(steps)


@dataclass(frozen=True)
class EpisodeConfig:
    replay_s: float = 8.0 / 6.0
    control_s: float = 40.0 / 6.0
    total_s: float = 8.0
    dt: float = 1.0 / 6.0
    stepper: str = "prednet"
    seed: int = 0
    road_halfwidth: float = 2.0
    cut_in_heading: float = 0.15
    lane_halfwidth: float = 1.75
    harsh_brake_decel: float = 4.0
    reactive: bool = False
    reactive_decel: float = 6.0
    terminate_on: tuple[str, ...] = ()
    lane_keep: bool = True

    def __post_init__(self):
        if self.stepper not in STEPPERS:
            raise ConfigError(f"unknown stepper {self.stepper!r}; choose from {STEPPERS}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")

    @classmethod
    def from_section(cls, section: SimConfig, dt: float, seed: int = 0, **overrides) -> EpisodeConfig:
        values = dict(replay_s=section.replay_s, control_s=section.control_s, total_s=section.total_s, dt=dt,
                      stepper=section.stepper, seed=seed, road_halfwidth=section.road_halfwidth,
                      cut_in_heading=section.cut_in_heading, lane_halfwidth=section.lane_halfwidth,
                      reactive_decel=section.reactive_decel)
        values.update(overrides)
        return cls(**values)

    def steps(self) -> tuple[int, int, int]:
        """
        Returns:
            (replay, control, total) 스텝 수.

        Raises:
            ConfigError: 시간이 Δt의 정수배가 아니거나 replay + control ≠ total.
        """
        replay = whole_steps(self.replay_s, self.dt, "replay_s")
        control = whole_steps(self.control_s, self.dt, "control_s")
        total = whole_steps(self.total_s, self.dt, "total_s")
        if replay + control != total:
            raise ConfigError(f"replay ({replay}) + control ({control}) steps != total ({total})")
        return replay, control, total


# --- 스크립트 트리거 ---

@dataclass
class BrakeTrigger:
    """ start_step부터 agent_id를 decel [m/s²]로 정지할 때까지 감속시킵니다. """
    agent_id: int
    start_step: int
    decel: float

    def active(self, step: int) -> bool:
        return step >= self.start_step


@dataclass
class MergeTrigger:
    """
    ego-선행차 간격이 gap_threshold를 넘으면 agent_id가 코사인 횡방향 궤적으로 ego 차선에 끼어듭니다.
    earliest_step 이전에는 발동하지 않습니다.
    """
    agent_id: int
    ego_id: int
    lead_id: int
    gap_threshold: float
    duration_steps: int
    earliest_step: int = 0
    started: int | None = None
    s: float = 0.0
    offset_from: float = 0.0
    offset_to: float = 0.0


@dataclass
class EpisodeSource:
    """ 에피소드 초기화 재료: 재생할 프레임, 지도, ego, 스크립트 트리거. """
    source_id: str
    frames: list[SceneFrame]
    lanes: LaneMap
    ego_id: int
    triggers: list = field(default_factory=list)
    roles: dict[str, int] = field(default_factory=dict)
    kind: str = "log"

    @classmethod
    def from_scene(cls, scene: Scene, lanes: LaneMap, ego_id: int | None = None) -> EpisodeSource:
        ego_id = ego_id if ego_id is not None else scene.ego_id
        if ego_id is None:
            raise InputError(f"scene {scene.scene_id!r} has no ego")
        return cls(scene.scene_id, list(scene.frames), lanes, ego_id)


@dataclass
class SimState:
    step: int
    agents: tuple[AgentState, ...]
    history: list[SceneFrame]
    latent: LatentState | None
    triggers: list
    rng: np.random.Generator
    log: EpisodeLog
    total_steps: int
    terminated: bool = False
    outputs: NetOutput | None = None

    @property
    def frame(self) -> SceneFrame:
        return self.history[-1]

    @property
    def ego(self) -> AgentState:
        return self.history[-1].get(self.log.ego_id)


def _agent_record(agent: AgentState, accel: float) -> dict:
    return {"id": agent.id, "x": agent.x, "y": agent.y, "heading": agent.heading, "speed": agent.speed,
            "a": accel, "length": agent.length, "width": agent.width}


class SimEnv:
    """
    단일 스레드 에피소드 환경. 여러 인스턴스를 서로 다른 시드로 병렬 실행할 수 있습니다.
    """
    def __init__(self, config: EpisodeConfig, weights: NetWeights | None = None,
                 extraction: ExtractionParams | None = None, bounds: KinematicBounds = KinematicBounds(),
                 task: str = ""):
        if config.stepper == "prednet":
            if weights is None:
                raise UsageError("the prednet stepper needs network weights")
            if abs(weights.config.dt - config.dt) > 1e-12:
                raise ConfigError(f"episode dt {config.dt} differs from the network dt {weights.config.dt}")
        self.config = config
        self.weights = weights
        self.extraction = extraction or ExtractionParams(dt=config.dt)
        self.bounds = bounds
        self.task = task
        self.lanes: list[Lane] = []
        self.lane_map: LaneMap | None = None
        self.ego_lane: Lane | None = None
        self._keep = 2

    # --- 초기화 ---

    def reset(self, source: EpisodeSource) -> SimState:
        """
        기록 프레임 round(replay_s/Δt)개를 재생하여 상태를 초기화합니다.

        Raises:
            InputError: 재생할 프레임이 부족하거나 ego가 없는 경우.
        """
        replay, _, total = self.config.steps()
        history_len = self.weights.config.history_len if self.weights is not None else 1
        if len(source.frames) < replay:
            raise InputError(f"source {source.source_id!r} has {len(source.frames)} frames, "
                             f"replay needs {replay}")
        if self.config.stepper == "prednet" and replay < history_len:
            raise InputError(f"replay of {replay} steps cannot fill a history of {history_len}")
        frames = list(source.frames[:replay])
        ego = frames[-1].get(source.ego_id)
        if ego is None:
            raise InputError(f"ego {source.ego_id} missing from the last replay frame")

        self.lane_map = source.lanes
        self.lanes = lanes_of(source.lanes)
        match = associate(self.lanes, ego.position, ego.heading) if self.lanes else None
        self.ego_lane = match[0] if match is not None else None

        rng = np.random.default_rng(self.config.seed)
        triggers = copy.deepcopy(source.triggers)
        if self.config.reactive:
            others = sorted(a.id for a in frames[-1].agents if a.id != source.ego_id)
            if others:
                victim = others[int(rng.integers(0, len(others)))]
                start = int(rng.integers(replay, total))
                triggers.append(BrakeTrigger(victim, start, self.config.reactive_decel))
                logger.debug("reactive brake: agent %d at step %d", victim, start)

        log = EpisodeLog(source.source_id, source.ego_id, self.config.dt, self.config.stepper, self.task,
                         self.config.seed)
        for i, frame in enumerate(frames):
            before = frames[i - 1].by_id() if i > 0 else {}
            records = []
            for agent in frame.agents:
                prev = before.get(agent.id)
                accel = (agent.speed - prev.speed) / self.config.dt if prev is not None else 0.0
                records.append(_agent_record(agent, accel))
            log.records.append(StepRecord(i, False, records))

        self._keep = max(history_len, 2)
        state = SimState(replay, frames[-1].agents, frames[-self._keep:], None, triggers, rng, log, total)
        if self.config.stepper == "prednet":
            self._refresh(state)
        return state

    # --- 전이 ---

    def _predict(self, state: SimState):
        config = self.weights.config
        history = state.history[-config.history_len:]
        ego = history[-1].get(state.log.ego_id)
        net_input = build_net_input(history, self.lane_map, ego, config.grid, 0.0, state.rng, config.history_len)
        return forward(net_input, self.weights, horizon=1)

    def _refresh(self, state: SimState) -> None:
        """ 현재 이력으로 한 스텝 예측을 돌려 잠재 상태와 출력을 갱신합니다. """
        state.outputs, state.latent = self._predict(state)

    def _stepper_next(self, state: SimState) -> dict[int, UnicycleState]:
        dt = self.config.dt
        frame = state.frame
        out = {}
        if self.config.stepper == "baseline":
            for agent in frame.agents:
                out[agent.id] = unicycle_step(UnicycleState.from_agent(agent), 0.0, 0.0, dt, self.bounds)
            return out

        if state.outputs is None:
            self._refresh(state)
        outputs = state.outputs
        ego = frame.get(state.log.ego_id)
        grid = self.weights.config.grid
        for agent in frame.agents:
            p0 = world_to_ego(agent.position, ego)
            v0 = vectors_to_ego(agent.velocity, ego)
            traj = extract_trajectory(p0, v0, outputs, self.extraction, grid, agent.id, steps=1)
            target = ego_to_world(traj.positions[1], ego)
            out[agent.id] = fit_unicycle(UnicycleState.from_agent(agent), target, dt, self.bounds)[2]
        return out

    def _ego_action(self, ego: AgentState, accel: float) -> UnicycleState:
        state = UnicycleState.from_agent(ego)
        yaw_rate = 0.0
        if self.config.lane_keep and self.ego_lane is not None:
            s_next = self.ego_lane.project(ego.position) + ego.speed * self.config.dt
            yaw_rate = wrap_angle(float(self.ego_lane.heading_at(s_next)) - state.heading) / self.config.dt
        return unicycle_step(state, accel, yaw_rate, self.config.dt, self.bounds)

    def _scripted(self, state: SimState, step: int, nxt: dict[int, UnicycleState]):
        dt = self.config.dt
        current = state.frame.by_id()
        for trig in state.triggers:
            agent = current.get(trig.agent_id)
            if agent is None:
                continue
            if isinstance(trig, BrakeTrigger):
                if trig.active(step):
                    nxt[agent.id] = unicycle_step(UnicycleState.from_agent(agent), -trig.decel, 0.0, dt, self.bounds)
            elif isinstance(trig, MergeTrigger):
                self._merge(trig, agent, current, step, nxt)

    def _merge(self, trig: MergeTrigger, agent: AgentState, current: dict, step: int,
               nxt: dict[int, UnicycleState]):
        lane = self.ego_lane
        if lane is None:
            return
        dt = self.config.dt
        if trig.started is None:
            ego, lead = current.get(trig.ego_id), current.get(trig.lead_id)
            if step < trig.earliest_step or ego is None or lead is None:
                return
            gap = lane.project(lead.position) - lane.project(ego.position) - 0.5 * (lead.length + ego.length)
            if gap <= trig.gap_threshold:
                return
            trig.started = step
            trig.s = lane.project(agent.position)
            trig.offset_from = lane.signed_offset(agent.position)
            trig.offset_to = 0.0
            logger.debug("merge of agent %d starts at step %d (gap %.1f m)", agent.id, step, gap)

        u = (step + 1 - trig.started) / trig.duration_steps
        if u > 1.0:
            return  # 끼어들기 완료 후에는 스테퍼가 진행
        span = trig.offset_to - trig.offset_from
        offset = trig.offset_from + span * 0.5 * (1.0 - math.cos(math.pi * u))
        lateral_speed = span * math.pi / (2.0 * trig.duration_steps * dt) * math.sin(math.pi * u)
        trig.s += agent.speed * dt
        tangent = lane.tangent_at(trig.s)
        normal = np.array([-tangent[1], tangent[0]])
        pos = lane.point_at(trig.s) + offset * normal
        heading = float(lane.heading_at(trig.s)) + math.atan2(lateral_speed, max(agent.speed, 1e-6))
        nxt[agent.id] = UnicycleState(float(pos[0]), float(pos[1]), heading, agent.speed)

    def _detect(self, state: SimState, step: int, agents: tuple[AgentState, ...], accels: dict[int, float]):
        events = [SimEvent("collision", step, pair) for pair in detect_collision(agents)]
        if self.lanes:
            events += [SimEvent("offroad", step, (a.id,)) for a in agents
                       if detect_offroad(a, self.lanes, self.config.road_halfwidth)]
        if self.ego_lane is not None and len(state.history) >= 2:
            for agent_id in cut_in_agents(state.history[-2:], state.log.ego_id, self.ego_lane,
                                          self.config.cut_in_heading, self.config.lane_halfwidth):
                events.append(SimEvent("cut_in", step, (agent_id,)))
        events += [SimEvent("harsh_brake", step, (aid,)) for aid, a in sorted(accels.items())
                   if a <= -self.config.harsh_brake_decel + 1e-9]
        return events

    def step(self, state: SimState, ego_action: float | None = None) -> tuple[SimState, list[SimEvent], dict]:
        """
        한 스텝 진행합니다.

        Args:
            ego_action (float | None): ego 가속도 [m/s²]. 없으면 ego도 스테퍼를 따릅니다.

        Returns:
            (SimState, list[SimEvent], dict): 갱신된 상태, 이번 스텝 사건, 에이전트 id → 관측 딕셔너리.

        Raises:
            UsageError: 종료된 에피소드를 진행하려는 경우.
        """
        if state.terminated:
            raise UsageError("step() called after the episode terminated")
        step = state.step
        frame = state.frame
        nxt = self._stepper_next(state)
        ego_id = state.log.ego_id
        if ego_action is not None:
            nxt[ego_id] = self._ego_action(frame.get(ego_id), float(ego_action))
        self._scripted(state, step, nxt)

        dt = self.config.dt
        agents = tuple(nxt[a.id].apply_to(a) for a in frame.agents)
        accels = {a.id: (nxt[a.id].speed - a.speed) / dt for a in frame.agents}
        new_frame = SceneFrame(frame.timestamp + dt, agents, frame.scene_id)
        state.history = (state.history + [new_frame])[-self._keep:]
        state.agents = agents
        if self.config.stepper == "prednet":
            self._refresh(state)

        events = self._detect(state, step, agents, accels)
        observations = {a.id: _agent_record(a, accels[a.id]) for a in agents}
        state.log.records.append(StepRecord(step, True, list(observations.values()), events))
        state.step += 1
        if state.step >= state.total_steps or any(e.kind in self.config.terminate_on for e in events):
            state.terminated = True
        return state, events, observations

    # --- 보조 ---

    def lead_gap(self, state: SimState) -> tuple[float | None, float]:
        """ ego 차선에서 ego 앞 가장 가까운 차량까지의 범퍼 간격 [m]과 접근 속도 [m/s]. """
        ego = state.ego
        if self.ego_lane is None or ego is None:
            return None, 0.0
        s_ego = self.ego_lane.project(ego.position)
        best = None
        for agent in state.frame.agents:
            if agent.id == ego.id or abs(self.ego_lane.signed_offset(agent.position)) > self.config.lane_halfwidth:
                continue
            s = self.ego_lane.project(agent.position)
            if s > s_ego and (best is None or s < best[0]):
                best = (s, agent)
        if best is None:
            return None, 0.0
        s, lead = best
        gap = max(s - s_ego - 0.5 * (lead.length + ego.length), 0.0)
        return gap, ego.speed - lead.speed

    def run(self, source: EpisodeSource, policy=None) -> EpisodeLog:
        """ 에피소드 하나를 끝까지 실행합니다. policy(env, state)는 ego 가속도 또는 None을 반환합니다. """
        state = self.reset(source)
        while not state.terminated:
            action = policy(self, state) if policy is not None else None
            state, _, _ = self.step(state, action)
        return state.log
