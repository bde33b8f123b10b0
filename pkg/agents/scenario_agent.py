# /agents/scenario_agent.py

import json
import logging
import math
from pathlib import Path

import numpy as np

from agents.sim_env import BrakeTrigger, EpisodeSource, MergeTrigger
from clients.synth_client import Road, SynthClient
from core.errors import InputError
from core.types import AgentState, SceneFrame

logger = logging.getLogger(__name__)

EGO_ID, LEAD_ID, NEIGHBOR_ID = 0, 1, 2
ROAD_LENGTH = 600.0
EGO_START_S = 60.0


class ScenarioAgent:
    """
    희귀 사건(끼어들기, 급제동) 강화학습 과제의 시나리오를 만드는 에이전트.
    직선 2차로 도로 위의 ego, 선행 차량, 옆 차로 차량 세 대로 구성됩니다.
    """
    def __init__(self, synth_client: SynthClient):
        self.synth_client = synth_client

        # scenarios.json 불러오기
        catalogue_path = Path(__file__).parent.parent / "agents" / "scenarios.json"
        with open(catalogue_path, "r", encoding="utf-8") as f:
            self.scenario_info = json.load(f)

        self.available_kinds = list(self.scenario_info.keys())
        self.road = Road(2, synth_client.config.lane_width)

    def terminate_on(self, kind: str) -> tuple[str, ...]:
        return tuple(self.scenario_info[kind]["terminate_on"])

    def _uniform(self, rng: np.random.Generator, bounds) -> float:
        lo, hi = bounds
        return float(rng.uniform(lo, hi))

    def _replay(self, states: list[tuple[int, int, float, float]], n_frames: int, dt: float,
                source_id: str) -> list[SceneFrame]:
        """ (id, 차로, 초기 s, 속력)을 등속으로 n_frames 프레임 재생합니다. 마지막 프레임이 초기 상태입니다. """
        frames = []
        for i in range(n_frames):
            back = (n_frames - 1 - i) * dt
            agents = []
            for agent_id, lane, s, v in states:
                pos, heading = self.road.pose(lane, s - v * back)
                agents.append(AgentState(agent_id, float(pos[0]), float(pos[1]), v * math.cos(heading),
                                         v * math.sin(heading), heading))
            frames.append(SceneFrame(i * dt, tuple(agents), source_id))
        return frames

    def make_scenario(self, kind: str, rng: np.random.Generator, replay_steps: int = 8,
                      dt: float = 1.0 / 6.0) -> EpisodeSource:
        """
        시나리오 하나를 만듭니다.

        Args:
            kind (str): 'cut_in' 또는 'harsh_brake'.
            rng (np.random.Generator): 초기 간격/속도와 트리거를 뽑는 난수원.
            replay_steps (int): 재생 구간 프레임 수. 트리거 스텝은 이 뒤의 제어 구간에 놓입니다.

        Returns:
            EpisodeSource: 재생 프레임, 차로 지도, 역할(ego/lead/neighbor)과 스크립트 트리거.
        """
        if kind not in self.scenario_info:
            raise InputError(f"unknown scenario {kind!r}; choose from {self.available_kinds}")
        info = self.scenario_info[kind]
        v_ego = self._uniform(rng, info["ego_speed"])
        v_lead = v_ego + self._uniform(rng, info["lead_speed_delta"])
        v_neighbor = v_ego + self._uniform(rng, info["neighbor_speed_delta"])
        lead_s = EGO_START_S + self._uniform(rng, info["lead_gap"]) + 4.66
        neighbor_s = EGO_START_S + self._uniform(rng, info["neighbor_ahead"])

        if kind == "cut_in":
            trigger = MergeTrigger(
                NEIGHBOR_ID, EGO_ID, LEAD_ID, info["merge_gap_threshold"],
                duration_steps=max(int(round(info["merge_duration_s"] / dt)), 1),
                earliest_step=replay_steps + int(round(self._uniform(rng, info["merge_after_s"]) / dt)),
            )
        else:
            trigger = BrakeTrigger(LEAD_ID, replay_steps + int(round(self._uniform(rng, info["brake_time_s"]) / dt)),
                                   self._uniform(rng, info["brake_decel"]))

        source_id = f"{kind}_{int(rng.integers(0, 2**31)):010d}"
        states = [(EGO_ID, 0, EGO_START_S, v_ego), (LEAD_ID, 0, lead_s, v_lead), (NEIGHBOR_ID, 1, neighbor_s, v_neighbor)]
        frames = self._replay(states, replay_steps, dt, source_id)
        roles = {"ego": EGO_ID, "lead": LEAD_ID, "neighbor": NEIGHBOR_ID}
        logger.debug("scenario %s: ego %.1f m/s, lead gap %.1f m, trigger %s", source_id, v_ego,
                     lead_s - EGO_START_S, trigger)
        return EpisodeSource(source_id, frames, self.road.lane_map(ROAD_LENGTH), EGO_ID, [trigger], roles, kind)
