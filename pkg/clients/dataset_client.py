# /clients/dataset_client.py

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow

from core.errors import InputError, SchemaError
from core.prednet import NetConfig, TrainingSample
from core.raster import check_uniform
from core.types import AgentState, LaneMap, LanePolyline, Scene, SceneFrame, wrap_angle

logger = logging.getLogger(__name__)

TRACK_COLUMNS = ["case_id", "track_id", "frame_id", "timestamp_ms", "x", "y", "vx", "vy", "psi_rad", "length", "width"]
NUMERIC_COLUMNS = TRACK_COLUMNS[1:]
VEHICLE_TYPES = {"car", "vehicle", "truck", "bus"}


class DatasetClient:
    """
    주행 기록(트랙 CSV/Parquet)과 차선 지도(JSON)를 읽고 쓰며, 학습 샘플을 만드는 클라이언트.
    로더는 파일 전체를 해석하거나 위치가 명시된 오류를 냅니다.
    """

    # --- 트랙 ---

    def _read_table(self, path: Path) -> pd.DataFrame:
        if not path.exists():
            raise FileNotFoundError(f"track file not found: {path}")
        if path.suffix == ".parquet":
            try:
                df = pd.read_parquet(path)
            except pyarrow.lib.ArrowInvalid as e:  # Parquet 파일이 아닐 때 발생하는 특정 오류
                raise SchemaError(f"{path}: not a valid parquet file ({e})") from e
            return df
        return pd.read_csv(path, dtype=str, keep_default_na=False)

    def load_tracks(self, path: str | Path) -> list[Scene]:
        """
        트랙 파일을 장면 목록으로 읽습니다.

        Args:
            path (str | Path): `case_id,track_id,frame_id,timestamp_ms,x,y,vx,vy,psi_rad,length,width`
                열을 가진 CSV 또는 Parquet. agent_type 열은 선택이며 차량이 아닌 행은 건너뜁니다.

        Returns:
            list[Scene]: case_id별 장면. 프레임은 시간순입니다.
        """
        path = Path(path)
        raw = self._read_table(path)
        missing = [c for c in TRACK_COLUMNS if c not in raw.columns]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}", location="header")

        df = pd.DataFrame({"case_id": raw["case_id"].astype(str)})
        for col in NUMERIC_COLUMNS:
            values = pd.to_numeric(raw[col], errors="coerce")
            bad = values.isna() | ~np.isfinite(values.astype(float))
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                # 머리글이 1번 줄
                raise SchemaError(f"{path}: column {col!r} has non-numeric value {raw[col].iloc[row]!r}",
                                  location=f"line {row + 2}")
            df[col] = values.astype(float)

        if "agent_type" in raw.columns:
            keep = raw["agent_type"].str.lower().isin(VEHICLE_TYPES)
            skipped = int((~keep).sum())
            if skipped:
                logger.info("%s: skipped %d non-vehicle rows", path, skipped)
            df = df[keep.to_numpy()]
        if "ego_id" in raw.columns:
            df["ego_id"] = pd.to_numeric(raw["ego_id"], errors="coerce")

        scenes = []
        for case_id, group in df.groupby("case_id", sort=True):
            frames = []
            for frame_id, rows in group.sort_values(["timestamp_ms", "track_id"]).groupby("frame_id", sort=False):
                try:
                    agents = tuple(
                        AgentState(int(r.track_id), r.x, r.y, r.vx, r.vy, r.psi_rad, r.length, r.width)
                        for r in rows.itertuples(index=False)
                    )
                    frames.append(SceneFrame(float(rows["timestamp_ms"].iloc[0]) / 1000.0, agents, str(case_id)))
                except InputError as e:
                    raise SchemaError(f"{path}: case {case_id} frame {int(frame_id)}: {e}") from e
            frames.sort(key=lambda f: f.timestamp)
            ego = group["ego_id"].dropna() if "ego_id" in group.columns else pd.Series(dtype=float)
            scenes.append(Scene(str(case_id), frames, int(ego.iloc[0]) if len(ego) else None))
        logger.info("%s: loaded %d scenes", path, len(scenes))
        return scenes

    def save_tracks(self, scenes: list[Scene], path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = []
        for scene in scenes:
            for frame_id, frame in enumerate(scene.frames):
                for a in frame.agents:
                    rows.append((scene.scene_id, a.id, frame_id, frame.timestamp * 1000.0, a.x, a.y, a.vx, a.vy,
                                 a.heading, a.length, a.width, scene.ego_id))
        df = pd.DataFrame(rows, columns=TRACK_COLUMNS + ["ego_id"])
        if path.suffix == ".parquet":
            df.to_parquet(path, index=False)
        else:
            df.to_csv(path, index=False)
        return path

    def resample(self, scene: Scene, target_dt: float) -> Scene:
        """
        선형 보간으로 장면을 다른 시간 간격으로 다시 표본화합니다.
        진행 방향은 최단 각 경로로 보간하며, 앞뒤 프레임 중 한쪽에 없는 에이전트는 그 시각에서 제외합니다.
        """
        if not target_dt > 0:
            raise InputError(f"target_dt must be positive, got {target_dt}")
        src_dt = check_uniform(scene.frames)
        if len(scene.frames) < 2 or abs(src_dt - target_dt) < 1e-12:
            return Scene(scene.scene_id, list(scene.frames), scene.ego_id)

        t0, t_end = scene.frames[0].timestamp, scene.frames[-1].timestamp
        n_out = int(np.floor((t_end - t0) / target_dt + 1e-9)) + 1
        frames = []
        for k in range(n_out):
            t = t0 + k * target_dt
            i = min(int(np.floor((t - t0) / src_dt + 1e-9)), len(scene.frames) - 1)
            a, b = scene.frames[i], scene.frames[min(i + 1, len(scene.frames) - 1)]
            w = 0.0 if a is b else (t - a.timestamp) / (b.timestamp - a.timestamp)
            if w <= 1e-12:
                frames.append(SceneFrame(t, a.agents, scene.scene_id))
                continue
            after = b.by_id()
            agents = []
            for pa in a.agents:
                pb = after.get(pa.id)
                if pb is None:
                    continue
                agents.append(pa.moved(
                    x=(1 - w) * pa.x + w * pb.x, y=(1 - w) * pa.y + w * pb.y,
                    vx=(1 - w) * pa.vx + w * pb.vx, vy=(1 - w) * pa.vy + w * pb.vy,
                    heading=wrap_angle(pa.heading + w * wrap_angle(pb.heading - pa.heading)),
                ))
            frames.append(SceneFrame(t, tuple(agents), scene.scene_id))
        return Scene(scene.scene_id, frames, scene.ego_id)

    # --- 차선 지도 ---

    def load_map(self, path: str | Path) -> LaneMap:
        """
        차선 지도 JSON을 읽습니다: [{"type": int, "points": [[x, y], ...], "altitudes": [z, ...]}, ...]
        """
        path = Path(path)
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON ({e.msg})", location=f"line {e.lineno}") from e
        if not isinstance(data, list):
            raise SchemaError(f"{path}: top level must be an array", location="$")

        polylines = []
        for i, item in enumerate(data):
            loc = f"$[{i}]"
            if not isinstance(item, dict):
                raise SchemaError(f"{path}: polyline must be an object", location=loc)
            unknown = set(item) - {"type", "points", "altitudes"}
            if unknown:
                raise SchemaError(f"{path}: unknown keys {sorted(unknown)}", location=loc)
            if not isinstance(item.get("type"), int) or isinstance(item.get("type"), bool):
                raise SchemaError(f"{path}: 'type' must be an integer", location=f"{loc}.type")
            points = item.get("points")
            if (not isinstance(points, list) or len(points) < 2
                    or not all(isinstance(p, list) and len(p) == 2 for p in points)):
                raise SchemaError(f"{path}: 'points' must be a list of at least 2 [x, y] pairs",
                                  location=f"{loc}.points")
            altitudes = item.get("altitudes")
            if altitudes is not None and (not isinstance(altitudes, list) or len(altitudes) != len(points)):
                raise SchemaError(f"{path}: 'altitudes' must have one value per point", location=f"{loc}.altitudes")
            try:
                polylines.append(LanePolyline(np.array(points, dtype=float), item["type"],
                                              None if altitudes is None else np.array(altitudes, dtype=float)))
            except (InputError, TypeError, ValueError) as e:
                raise SchemaError(f"{path}: {e}", location=loc) from e
        return LaneMap(polylines)

    def save_map(self, lane_map: LaneMap, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = [{"type": p.line_type, "points": p.points.tolist(), "altitudes": p.altitudes.tolist()}
                for p in lane_map.polylines]
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    # --- 학습 샘플 ---

    def make_samples(self, scenes: list[Scene], lane_map: LaneMap, config: NetConfig, stride: int | None = None,
                     egos_per_window: int = 1) -> list[TrainingSample]:
        """
        장면을 T̄ + T 프레임 창으로 잘라 학습 샘플을 만듭니다.
        ego는 장면의 ego_id, 없으면 창 전체에 등장하는 에이전트 중 id가 작은 순서로 고릅니다.
        """
        window = config.history_len + config.horizon
        stride = stride or window
        samples = []
        for scene in scenes:
            if len(scene.frames) < window:
                logger.debug("scene %s shorter than %d frames, skipped", scene.scene_id, window)
                continue
            for start in range(0, len(scene.frames) - window + 1, stride):
                frames = scene.frames[start:start + window]
                present = set.intersection(*[{a.id for a in f.agents} for f in frames])
                if scene.ego_id is not None:
                    egos = [scene.ego_id] if scene.ego_id in present else []
                else:
                    egos = sorted(present)[:egos_per_window]
                for ego_id in egos:
                    samples.append(TrainingSample(frames[:config.history_len], frames[config.history_len:],
                                                  lane_map, ego_id, f"{scene.scene_id}:{start}:{ego_id}"))
        logger.info("built %d training samples from %d scenes", len(samples), len(scenes))
        return samples
