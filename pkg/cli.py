# cli.py

"""
RasterSim 명령줄 진입점.

예시:
    python cli.py --out runs/data synth
    python cli.py --out runs/net train --tracks runs/data/tracks.csv --map runs/data/map.json
    python cli.py --out runs/sim simulate --tracks runs/data/tracks.csv --map runs/data/map.json \
        --weights runs/net/weights.pnet --reactive
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from agents.eval_agent import EvalAgent
from agents.policy_agent import AccController, PolicyAgent, SacController
from agents.scenario_agent import ScenarioAgent
from agents.sim_env import EpisodeConfig, EpisodeSource
from agents.train_agent import TrainAgent
from clients.checkpoint_client import CheckpointClient
from clients.dataset_client import DatasetClient
from clients.render_client import RenderClient
from clients.synth_client import SynthClient
from core.config import AppConfig, load_config
from core.errors import InputError, UsageError
from core.events import EpisodeLog
from core.extract import ExtractionParams, extend_analytic, extract_all, write_trajectories_csv
from core.lanes import lanes_of
from core.log import setup_logging
from core.metrics import compare_reports
from core.prednet import forward
from core.raster import build_net_input
from core.types import LaneMap

logger = logging.getLogger("rastersim")

VERSION = "0.1.0"


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    version: str = VERSION
    duration_s: float = 0.0

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path


class _Context:
    """ 한 번의 명령 실행에 필요한 설정과 클라이언트. 출력 경로를 manifest에 기록합니다. """

    def __init__(self, args: argparse.Namespace, config: AppConfig, seed: int):
        self.args = args
        self.config = config
        self.seed = seed
        self.out = Path(args.out)
        self.dataset = DatasetClient()
        self.checkpoints = CheckpointClient()
        self.manifest = RunManifest(args.command, config.snapshot(), seed)

    def output(self, path: Path) -> Path:
        self.manifest.outputs.append(str(path))
        return path

    def input(self, name: str, path) -> Path | None:
        if path is None:
            return None
        self.manifest.inputs[name] = str(path)
        return Path(path)

    def scenes(self):
        path = self.input("tracks", self.args.tracks)
        if path is None:
            raise UsageError("--tracks is required")
        scenes = self.dataset.load_tracks(path)
        dt = self.config.net.dt
        return [s if len(s.frames) < 2 or abs(s.dt - dt) < 1e-4 else self.dataset.resample(s, dt) for s in scenes]

    def lane_map(self) -> LaneMap:
        path = self.input("map", getattr(self.args, "map", None))
        return self.dataset.load_map(path) if path is not None else LaneMap([])

    def weights(self, required: bool = True):
        path = self.input("weights", getattr(self.args, "weights", None))
        if path is None:
            if required:
                raise UsageError("--weights is required")
            return None
        weights = self.checkpoints.load_weights(path)
        if weights.config.dt != self.config.net.dt:
            logger.warning("weights were trained at dt=%.4f s, config says %.4f s", weights.config.dt,
                           self.config.net.dt)
        return weights

    def extraction(self, dt: float) -> ExtractionParams:
        path = self.input("extraction", getattr(self.args, "extraction", None))
        if path is None:
            return ExtractionParams(dt=dt)
        return ExtractionParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def episode(self, dt: float, **overrides) -> EpisodeConfig:
        return EpisodeConfig.from_section(self.config.sim, dt, self.seed, **overrides)

    def write_json(self, name: str, data) -> Path:
        path = self.out / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return self.output(path)


# --- 명령 ---

def cmd_synth(ctx: _Context) -> int:
    client = SynthClient(ctx.config.synth, ctx.config.net.dt)
    scenes, lane_map = client.synth_dataset(ctx.seed)
    ctx.output(ctx.dataset.save_tracks(scenes, ctx.out / "tracks.csv"))
    ctx.output(ctx.dataset.save_map(lane_map, ctx.out / "map.json"))
    print(f"{len(scenes)} scenes, {sum(len(s.frames) for s in scenes)} frames -> {ctx.out}")
    return 0


def cmd_train(ctx: _Context) -> int:
    net_config = ctx.config.net_config()
    samples = ctx.dataset.make_samples(ctx.scenes(), ctx.lane_map(), net_config)
    resume = ctx.weights(required=False)
    settings = ctx.config.train
    if ctx.args.iterations is not None:
        settings = settings.model_copy(update={"iterations": ctx.args.iterations})
    result = TrainAgent(ctx.checkpoints).train(
        samples, net_config, settings, seed=ctx.seed, out_dir=ctx.out, weights=resume,
        dtype=np.dtype(ctx.config.net.dtype), progress=not ctx.args.quiet,
    )
    for path in result.checkpoints:
        ctx.output(path)
    path = ctx.output(ctx.checkpoints.save_weights(result.weights, ctx.out / "weights.pnet",
                                                   meta={"iterations": len(result.history)}))
    history = pd.DataFrame(result.breakdown)
    history.insert(0, "loss", result.history)
    history.to_csv(ctx.out / "loss.csv", index_label="iteration", float_format="%.8g")
    ctx.output(ctx.out / "loss.csv")
    print(f"loss {result.history[0]:.5f} -> {result.history[-1]:.5f}; weights at {path}")
    return 0


def cmd_fit_extract(ctx: _Context) -> int:
    weights = ctx.weights(required=False)
    net_config = weights.config if weights is not None else ctx.config.net_config()
    samples = ctx.dataset.make_samples(ctx.scenes(), ctx.lane_map(), net_config)
    section = ctx.config.extract
    params, value, initial = EvalAgent(ctx.config.bounds()).fit_extraction(
        samples, net_config, weights, section.n_fit_samples, section.maxiter, section.fatol)
    ctx.write_json("extraction.json", params.to_dict())
    print(f"mean ADE {initial:.4f} m -> {value:.4f} m")
    return 0


def cmd_predict(ctx: _Context) -> int:
    weights = ctx.weights()
    config = weights.config
    scenes = {s.scene_id: s for s in ctx.scenes()}
    scene_id = ctx.args.scene or next(iter(scenes), None)
    if scene_id not in scenes:
        raise InputError(f"scene {scene_id!r} not found in the track file")
    scene = scenes[scene_id]
    t = ctx.args.frame if ctx.args.frame is not None else config.history_len - 1
    if t + 1 < config.history_len or t >= len(scene.frames):
        raise InputError(f"frame {t} leaves no room for a history of {config.history_len} frames")
    history = scene.frames[t + 1 - config.history_len:t + 1]
    ego_id = scene.ego_id if scene.ego_id is not None else min(a.id for a in history[-1].agents)
    ego = history[-1].get(ego_id)
    if ego is None:
        raise InputError(f"ego {ego_id} missing at frame {t}")
    lane_map = ctx.lane_map()

    net_input = build_net_input(history, lane_map, ego, config.grid, 0.0, None, config.history_len)
    outputs, _ = forward(net_input, weights)
    trajectories = extract_all(history[-1], ego, outputs, ctx.extraction(config.dt), config.grid)
    if ctx.args.extend_to is not None:
        lanes = lanes_of(lane_map.to_ego_frame(ego))
        trajectories = {k: extend_analytic(v, lanes, ctx.args.extend_to) for k, v in trajectories.items()}
    path = ctx.output(write_trajectories_csv(trajectories.values(), ctx.out / "trajectories.csv"))
    print(f"{len(trajectories)} trajectories for {scene_id} frame {t} -> {path}")
    return 0


def cmd_eval(ctx: _Context) -> int:
    weights = ctx.weights()
    samples = ctx.dataset.make_samples(ctx.scenes(), ctx.lane_map(), weights.config)
    agent = EvalAgent(ctx.config.bounds())
    net, baseline = agent.evaluate_prediction(samples, weights, ctx.extraction(weights.config.dt),
                                              ctx.config.metrics.horizons_s, progress=not ctx.args.quiet)
    net.label, baseline.label = "prednet", "baseline"
    ctx.write_json("report.json", {"prednet": net.to_dict(), "baseline": baseline.to_dict(),
                                   "summary": agent.summarize_for_feedback([net, baseline])})
    table = compare_reports([net, baseline])
    table.to_csv(ctx.out / "report.csv", float_format="%.6f")
    ctx.output(ctx.out / "report.csv")
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


def _sources(ctx: _Context, scenes, lane_map, n: int) -> list[EpisodeSource]:
    usable = [s for s in scenes if s.ego_id is not None]
    if not usable:
        raise InputError("no scene names an ego vehicle")
    return [EpisodeSource.from_scene(usable[i % len(usable)], lane_map) for i in range(n)]


def cmd_simulate(ctx: _Context) -> int:
    stepper = ctx.args.stepper or ctx.config.sim.stepper
    weights = ctx.weights(required=stepper == "prednet")
    dt = weights.config.dt if weights is not None else ctx.config.net.dt
    n = ctx.args.episodes or ctx.config.sim.n_episodes
    sources = _sources(ctx, ctx.scenes(), ctx.lane_map(), n)
    agent = EvalAgent(ctx.config.bounds())
    extraction = ctx.extraction(dt)
    progress = not ctx.args.quiet

    logs = agent.simulate(sources, ctx.episode(dt, stepper=stepper), weights, extraction, progress)
    reactive = None
    if ctx.args.reactive:
        reactive = agent.simulate(sources, ctx.episode(dt, stepper=stepper, reactive=True), weights, extraction,
                                  progress)

    episodes = ctx.out / "episodes"
    episodes.mkdir(parents=True, exist_ok=True)
    for i, log in enumerate(logs):
        log.save(ctx.output(episodes / f"episode_{i:04d}.jsonl"))
    for i, log in enumerate(reactive or []):
        log.save(ctx.output(episodes / f"reactive_{i:04d}.jsonl"))

    metrics = ctx.config.metrics
    report = agent.simulation_report(logs, reactive, stepper, metrics.segment_s, metrics.jerk_threshold)
    ctx.write_json("report.json", report.to_dict())
    print(report.to_table())
    return 0


def _policy_agent(ctx: _Context) -> PolicyAgent:
    return PolicyAgent(ScenarioAgent(SynthClient(ctx.config.synth, ctx.config.net.dt)), ctx.checkpoints)


def cmd_rl_train(ctx: _Context) -> int:
    weights = ctx.weights()
    task = ctx.args.task or ctx.config.rl.task
    episodes = ctx.args.episodes or ctx.config.rl.episodes
    result = _policy_agent(ctx).train_policy(
        task, weights, ctx.config.rl_config(), episodes, ctx.seed, ctx.out,
        episode=ctx.episode(weights.config.dt), extraction=ctx.extraction(weights.config.dt),
        progress=not ctx.args.quiet,
    )
    for path in result.checkpoints:
        ctx.output(path)
    ctx.output(ctx.checkpoints.save_policy(result.weights, ctx.out / "policy.pnet",
                                           meta={"task": task, "episodes": episodes}))
    pd.DataFrame({"return": result.returns, "length": result.lengths}).to_csv(
        ctx.out / "returns.csv", index_label="episode", float_format="%.6f")
    ctx.output(ctx.out / "returns.csv")
    tail = result.returns[-max(1, len(result.returns) // 10):]
    print(f"{task}: {episodes} episodes, final mean return {np.mean(tail):.3f}")
    return 0


def cmd_rl_eval(ctx: _Context) -> int:
    weights = ctx.weights()
    task = ctx.args.task or ctx.config.rl.task
    n = ctx.args.episodes or ctx.config.rl.eval_episodes
    if ctx.args.policy == "sac":
        path = ctx.input("policy", ctx.args.policy_weights)
        if path is None:
            raise UsageError("--policy sac needs --policy-weights")
        controller = SacController(ctx.checkpoints.load_policy(path))
    elif ctx.args.policy == "acc":
        rl = ctx.config.rl
        controller = AccController(a_min=rl.a_min, a_max=rl.a_max)
    else:
        controller = None
    seeds = [ctx.seed + i for i in range(n)]
    pct = _policy_agent(ctx).evaluate_policy(task, controller, weights, n, seeds, ctx.episode(weights.config.dt),
                                             ctx.extraction(weights.config.dt))
    ctx.write_json("rl_eval.json", {"task": task, "policy": ctx.args.policy, "episodes": n, "failure_pct": pct})
    print(f"{task} / {ctx.args.policy}: {pct:.1f}% failed episodes")
    return 0


def cmd_rl_tune(ctx: _Context) -> int:
    weights = ctx.weights()
    rl = ctx.config.rl
    task = ctx.args.task or rl.task
    episodes = ctx.args.episodes or rl.episodes
    best, trials = _policy_agent(ctx).tune_rewards(
        task, weights, ctx.config.rl_config(), episodes, rl.eval_episodes, ctx.seed,
        rl.tune_init_points, rl.tune_iterations, episode=ctx.episode(weights.config.dt),
    )
    ctx.write_json("reward_weights.json", {"best": best, "trials": trials})
    print(json.dumps(best, sort_keys=True))
    return 0


def cmd_render(ctx: _Context) -> int:
    frames = ctx.out / "frames"
    lane_map = ctx.lane_map()
    if ctx.args.log is not None:
        log = EpisodeLog.load(ctx.input("log", ctx.args.log))
        grid = ctx.weights().config.grid if ctx.args.weights else ctx.config.grid()
        paths = RenderClient(grid).render_episode(log, frames, lane_map)
    else:
        weights = ctx.weights()
        config = weights.config
        scene = ctx.scenes()[ctx.args.scene_index]
        history = scene.frames[:config.history_len]
        ego_id = scene.ego_id if scene.ego_id is not None else min(a.id for a in history[-1].agents)
        net_input = build_net_input(history, lane_map, history[-1].get(ego_id), config.grid, 0.0, None,
                                    config.history_len)
        outputs, _ = forward(net_input, weights)
        paths = RenderClient(config.grid).render_output(outputs, frames)
    for path in paths:
        ctx.output(path)
    print(f"{len(paths)} frames -> {frames}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "fit-extract": cmd_fit_extract,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "simulate": cmd_simulate,
    "rl-train": cmd_rl_train,
    "rl-eval": cmd_rl_eval,
    "rl-tune": cmd_rl_tune,
    "render": cmd_render,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rastersim", description="Rasterized traffic prediction and simulation")
    p.add_argument("--config", default=None, help="TOML config file (default: built-in defaults)")
    p.add_argument("--seed", type=int, default=None, help="Random seed (default: config seed)")
    p.add_argument("--out", default="runs/latest", help="Output directory (default: runs/latest)")
    p.add_argument("--quiet", action="store_true", help="Disable progress bars")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, weights: bool = True):
        sp.add_argument("--tracks", help="Track CSV/Parquet file")
        sp.add_argument("--map", help="Lane map JSON file")
        if weights:
            sp.add_argument("--weights", help="Network weight container (.pnet)")

    sub.add_parser("synth", help="Generate a synthetic dataset")

    sp = sub.add_parser("train", help="Train the prediction network")
    data_args(sp)
    sp.add_argument("--iterations", type=int, default=None, help="Override train.iterations")

    sp = sub.add_parser("fit-extract", help="Fit trajectory extraction parameters")
    data_args(sp)

    sp = sub.add_parser("predict", help="Write extracted trajectories for one scene")
    data_args(sp)
    sp.add_argument("--extraction", help="Extraction parameter JSON")
    sp.add_argument("--scene", default=None, help="Scene id (default: first scene)")
    sp.add_argument("--frame", type=int, default=None, help="Prediction frame index (default: T̄-1)")
    sp.add_argument("--extend-to", type=float, default=None, help="Extend trajectories analytically to this horizon [s]")

    sp = sub.add_parser("eval", help="ADE/FDE of the network vs the analytical baseline")
    data_args(sp)
    sp.add_argument("--extraction", help="Extraction parameter JSON")

    sp = sub.add_parser("simulate", help="Run closed-loop episodes and report failure rates")
    data_args(sp)
    sp.add_argument("--extraction", help="Extraction parameter JSON")
    sp.add_argument("--stepper", choices=["prednet", "baseline"], default=None)
    sp.add_argument("--episodes", type=int, default=None, help="Override sim.n_episodes")
    sp.add_argument("--reactive", action="store_true", help="Also run episodes with one injected harsh brake")

    for name, help_text in (("rl-train", "Train a SAC ego policy"), ("rl-eval", "Failure rate of an ego controller"),
                            ("rl-tune", "Bayesian search over reward weights")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--weights", help="Network weight container (.pnet)")
        sp.add_argument("--extraction", help="Extraction parameter JSON")
        sp.add_argument("--task", choices=["cut_in", "harsh_brake"], default=None)
        sp.add_argument("--episodes", type=int, default=None)
        if name == "rl-eval":
            sp.add_argument("--policy", choices=["sac", "acc", "imitation"], default="sac")
            sp.add_argument("--policy-weights", help="Policy weight container (.pnet)")

    sp = sub.add_parser("render", help="Render an episode log or network output as PPM frames")
    data_args(sp)
    sp.add_argument("--log", help="Episode log (.jsonl)")
    sp.add_argument("--scene-index", type=int, default=0)
    return p


def run_cli(argv: list[str] | None = None) -> int:
    """
    Returns:
        int: 0 성공, 1 실행 실패, 2 사용법 오류.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    start = time.perf_counter()
    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else config.seed
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        setup_logging(config.log_level, out / "run.log")
        ctx = _Context(args, config, seed)
        code = COMMANDS[args.command](ctx)
    except UsageError as e:
        logger.error("usage error: %s", e)
        parser.print_usage(sys.stderr)
        return 2
    except Exception as e:
        logger.error("%s failed: %s", args.command, e)
        return 1

    ctx.manifest.duration_s = round(time.perf_counter() - start, 3)
    ctx.manifest.write(out)
    return code


if __name__ == "__main__":
    sys.exit(run_cli())
