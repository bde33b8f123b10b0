# /clients/render_client.py

"""
에피소드 기록과 네트워크 출력을 ego 중심 조감도 이미지(이진 PPM, frame_%05d.ppm)로 그립니다.
"""

import logging
from pathlib import Path

import numpy as np

from core.events import EpisodeLog
from core.prednet import NetOutput
from core.raster import GridSpec, rasterize_map, rasterize_owners
from core.types import AgentState, LaneMap

logger = logging.getLogger(__name__)

BACKGROUND = (32, 32, 32)
LINE_COLOR = (200, 200, 200)
EGO_COLOR = (60, 200, 90)
AGENT_COLOR = (70, 130, 220)
EVENT_COLOR = (230, 60, 50)


def write_ppm(image: np.ndarray, path: str | Path) -> Path:
    """ (H, W, 3) uint8 배열을 이진 PPM(P6)으로 씁니다. """
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    path = Path(path)
    h, w, _ = image.shape
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + image.tobytes())
    return path


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    # write_ppm이 쓰는 세 줄 머리글만 읽습니다
    magic, size, _, body = data.split(b"\n", 3)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in size.split())
    return np.frombuffer(body[:w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def _agents_of(record) -> list[AgentState]:
    return [AgentState(int(a["id"]), a["x"], a["y"], a["speed"] * np.cos(a["heading"]),
                       a["speed"] * np.sin(a["heading"]), a["heading"], a.get("length", 4.66), a.get("width", 1.86))
            for a in record.agents]


class RenderClient:
    def __init__(self, grid: GridSpec = GridSpec()):
        self.grid = grid

    def draw_frame(self, agents: list[AgentState], ego: AgentState, lanes: LaneMap | None = None,
                   highlight: set[int] = frozenset()) -> np.ndarray:
        n = self.grid.size_px
        image = np.empty((n, n, 3), dtype=np.uint8)
        image[:] = BACKGROUND
        if lanes is not None:
            image[rasterize_map(lanes, ego, self.grid).line_type > 0] = LINE_COLOR
        owner, _ = rasterize_owners(agents, ego, self.grid)
        image[owner >= 0] = AGENT_COLOR
        image[owner == ego.id] = EGO_COLOR
        for agent_id in highlight:
            image[owner == agent_id] = EVENT_COLOR
        return image

    def render_episode(self, log: EpisodeLog, out_dir: str | Path, lanes: LaneMap | None = None) -> list[Path]:
        """
        기록의 스텝마다 한 장씩 그립니다. 사건에 연루된 에이전트는 빨간색입니다.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, record in enumerate(log.records):
            agents = _agents_of(record)
            ego = next((a for a in agents if a.id == log.ego_id), None)
            if ego is None:
                logger.warning("episode %s step %d has no ego, frame skipped", log.episode_id, record.step)
                continue
            involved = {aid for e in record.events for aid in e.agents}
            paths.append(write_ppm(self.draw_frame(agents, ego, lanes, involved), out_dir / f"frame_{i:05d}.ppm"))
        logger.info("rendered %d frames to %s", len(paths), out_dir)
        return paths

    def render_output(self, outputs: NetOutput, out_dir: str | Path) -> list[Path]:
        """
        미래 스텝마다 점유 확률(초록)과 속도 크기(빨강), 역추적 크기(파랑)를 겹쳐 그립니다.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for k in range(outputs.horizon):
            speed = np.linalg.norm(outputs.velocity[k], axis=0)
            back = np.linalg.norm(outputs.backtrace[k], axis=0)
            image = np.stack([
                np.clip(speed / 20.0, 0.0, 1.0),
                np.clip(outputs.occupancy[k], 0.0, 1.0),
                np.clip(back / 5.0, 0.0, 1.0),
            ], axis=-1)
            paths.append(write_ppm((image * 255).round().astype(np.uint8), out_dir / f"frame_{k:05d}.ppm"))
        return paths
