# app.py

import json
from pathlib import Path

import pandas as pd
import streamlit as st

from clients.render_client import read_ppm
from core.events import EpisodeLog

RUNS_DIR = Path("runs")


def list_runs(root: Path) -> list[Path]:
    """ manifest.json이 있는 실행 디렉토리 목록 (최근 수정 순). """
    if not root.exists():
        return []
    runs = [p.parent for p in root.glob("*/manifest.json")]
    return sorted(runs, key=lambda p: (p / "manifest.json").stat().st_mtime, reverse=True)


def report_frame(report: dict) -> pd.DataFrame:
    """ report.json (단일 보고서 또는 라벨별 보고서)을 지표 × 라벨 표로 바꿉니다. """
    reports = {k: v for k, v in report.items() if isinstance(v, dict) and "ade_m" in v}
    if not reports:
        reports = {report.get("label") or "run": report}
    columns = {}
    for label, r in reports.items():
        rows = {}
        for h, v in r.get("ade_m", {}).items():
            rows[f"ade@{h}s"] = v
        for h, v in r.get("fde_m", {}).items():
            rows[f"fde@{h}s"] = v
        for name in ("comfort_pct", "offroad_pct", "collision_pct", "reactive_collision_pct"):
            if r.get(name) is not None:
                rows[name] = r[name]
        columns[label] = rows
    return pd.DataFrame(columns)


def episode_frame(log: EpisodeLog) -> pd.DataFrame:
    rows = []
    for record in log.records:
        ego = record.agent(log.ego_id) or {}
        rows.append({"step": record.step, "controlled": record.controlled, "ego_speed": ego.get("speed"),
                     "ego_accel": ego.get("a"), "events": ", ".join(e.kind for e in record.events),
                     "reward": record.reward})
    return pd.DataFrame(rows)


def main():
    """
    RasterSim 실행 결과 열람기. 실행 디렉토리의 manifest, 지표 보고서, 에피소드 기록과 렌더 프레임을 보여줍니다.
    시뮬레이션을 직접 진행하지는 않습니다.
    """
    st.set_page_config(page_title="RasterSim runs", layout="wide")
    st.title("RasterSim")
    st.markdown("`cli.py`로 만든 실행 디렉토리를 살펴봅니다.")

    root = Path(st.sidebar.text_input("실행 루트 디렉토리", value=str(RUNS_DIR)))
    runs = list_runs(root)
    if not runs:
        st.info(f"{root} 아래에 manifest.json이 있는 실행이 없습니다.")
        return
    run = st.sidebar.selectbox("실행", runs, format_func=lambda p: p.name)

    try:
        manifest = json.loads((run / "manifest.json").read_text(encoding="utf-8"))
        st.subheader(f"{manifest['command']} · seed {manifest['seed']}")
        cols = st.columns(3)
        cols[0].metric("소요 시간 [s]", manifest.get("duration_s"))
        cols[1].metric("출력 파일", len(manifest.get("outputs", [])))
        cols[2].metric("버전", manifest.get("version"))
        with st.expander("manifest"):
            st.json(manifest)

        report_path = run / "report.json"
        if report_path.exists():
            st.subheader("지표")
            st.dataframe(report_frame(json.loads(report_path.read_text(encoding="utf-8"))))

        logs = sorted((run / "episodes").glob("*.jsonl"))
        if logs:
            st.subheader("에피소드")
            log_path = st.selectbox("에피소드 기록", logs, format_func=lambda p: p.name)
            log = EpisodeLog.load(log_path)
            st.dataframe(episode_frame(log), hide_index=True)

        frames = sorted((run / "frames").glob("frame_*.ppm"))
        if frames:
            st.subheader("렌더 프레임")
            index = st.slider("프레임", 0, len(frames) - 1, 0)
            st.image(read_ppm(frames[index]), caption=frames[index].name, width=384)

    except Exception as e:
        st.error(f"오류가 발생했습니다: {e}")


if __name__ == "__main__":
    main()
