# /core/config.py

"""
실행 설정. TOML 파일의 각 섹션이 아래 모델 하나에 대응하며, 모르는 키는 오류입니다.

예시:
    [net]
    latent_preset = "desk_small"

    [train]
    iterations = 500
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from core.errors import ConfigError
from core.kinematics import KinematicBounds
from core.policy import RLConfig
from core.prednet import PRESETS, NetConfig
from core.raster import GridSpec


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RasterConfig(_Section):
    size_px: int | None = Field(None, gt=0, description="격자 크기. 비우면 잠재 프리셋 값")
    resolution: float | None = Field(None, gt=0, description="m/px. 비우면 잠재 프리셋 값")
    map_dropout_prob: float = Field(0.1, ge=0, le=1)


class NetSection(_Section):
    latent_preset: Literal["desk", "desk_small", "full"] = "desk"
    history_len: int = Field(6, ge=1)
    horizon: int = Field(18, ge=1)
    dt: float = Field(1.0 / 6.0, gt=0)
    focal_weight: float = Field(0.05, ge=0)
    lambda_v: float = Field(1.0, ge=0)
    lambda_w: float = Field(1.0, ge=0)
    focal_gamma: float = Field(2.0, ge=0)
    focal_alpha: float = Field(0.25, ge=0, le=1)
    past_decode_weight: float = Field(1.0, ge=0)
    logit_clamp: float = Field(15.0, gt=0)
    dtype: Literal["float32", "float64"] = "float32"


class TrainConfig(_Section):
    iterations: int = Field(2000, ge=1)
    batch_size: int = Field(4, ge=1)
    lr: float = Field(1e-3, gt=0)
    checkpoint_every: int = Field(500, ge=1)
    prefetch: int = Field(2, ge=1, description="미리 준비할 배치 수")
    workers: int = Field(2, ge=1)
    log_every: int = Field(50, ge=1)


class ExtractConfig(_Section):
    maxiter: int = Field(200, ge=1)
    fatol: float = Field(1e-4, gt=0)
    extend_to_s: float = Field(5.0, gt=0)
    n_fit_samples: int = Field(32, ge=1)


class SimConfig(_Section):
    replay_s: float = Field(8.0 / 6.0, gt=0)
    control_s: float = Field(40.0 / 6.0, gt=0)
    total_s: float = Field(8.0, gt=0)
    stepper: Literal["prednet", "baseline"] = "prednet"
    road_halfwidth: float = Field(2.0, gt=0)
    cut_in_heading: float = Field(0.15, gt=0)
    lane_halfwidth: float = Field(1.75, gt=0)
    reactive_decel: float = Field(6.0, gt=0)
    n_episodes: int = Field(100, ge=1)
    a_max: float = Field(8.0, gt=0)
    omega_max: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _durations_add_up(self):
        if abs(self.replay_s + self.control_s - self.total_s) > 1e-6:
            raise ValueError(f"replay_s + control_s must equal total_s ({self.replay_s} + {self.control_s} "
                             f"!= {self.total_s})")
        return self


class RLSection(_Section):
    task: Literal["cut_in", "harsh_brake"] = "harsh_brake"
    episodes: int = Field(200, ge=1)
    eval_episodes: int = Field(10, ge=1)
    gamma: float = Field(0.95, gt=0, lt=1)
    max_steps: int = Field(48, ge=1)
    alpha1: float = Field(-0.1, le=0)
    alpha2: float = Field(-0.05, le=0)
    alpha3: float = Field(0.5, ge=0)
    r_rare: float = -1.0
    d_target: float = Field(20.0, gt=0)
    a_min: float = -6.0
    a_max: float = 4.0
    lr: float = Field(3e-4, gt=0)
    tau: float = Field(0.005, gt=0, le=1)
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(50000, ge=1)
    target_entropy: float = -1.0
    hidden: int = Field(64, ge=1)
    use_kinematics: bool = True
    warmup_steps: int = Field(200, ge=0)
    tune_init_points: int = Field(3, ge=1)
    tune_iterations: int = Field(5, ge=0)


class MetricsConfig(_Section):
    horizons_s: list[float] = Field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    segment_s: float = Field(2.0, gt=0)
    jerk_threshold: float = Field(2.0, gt=0)


class SynthSection(_Section):
    n_scenes: int = Field(32, ge=1)
    road: Literal["straight", "arc", "mixed"] = "straight"
    curvature: float = Field(0.01, ge=0, description="arc 도로의 곡률 [1/m]")
    n_lanes: int = Field(2, ge=1)
    lane_width: float = Field(3.5, gt=0)
    n_agents: int = Field(6, ge=1)
    speed_min: float = Field(5.0, ge=0)
    speed_max: float = Field(15.0, ge=0)
    frames: int = Field(24, ge=2, description="장면당 프레임 수")
    follow_gain: float = Field(0.5, ge=0)
    speed_gain: float = Field(0.3, ge=0)
    min_gap: float = Field(8.0, gt=0)
    a_max: float = Field(4.0, gt=0)
    brake_prob: float = Field(0.3, ge=0, le=1)
    brake_decel: float = Field(4.0, gt=0)
    road_length: float = Field(200.0, gt=0)

    @model_validator(mode="after")
    def _speed_range(self):
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min must not exceed speed_max")
        return self


class AppConfig(_Section):
    seed: int = 0
    log_level: str = "INFO"
    raster: RasterConfig = RasterConfig()
    net: NetSection = NetSection()
    train: TrainConfig = TrainConfig()
    extract: ExtractConfig = ExtractConfig()
    sim: SimConfig = SimConfig()
    rl: RLSection = RLSection()
    metrics: MetricsConfig = MetricsConfig()
    synth: SynthSection = SynthSection()

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")

    def grid(self) -> GridSpec:
        preset = PRESETS[self.net.latent_preset]
        return GridSpec(self.raster.size_px or preset["size_px"], self.raster.resolution or preset["resolution"])

    def net_config(self) -> NetConfig:
        net = self.net
        base = NetConfig.preset(net.latent_preset)
        return NetConfig(
            history_len=net.history_len, horizon=net.horizon, dt=net.dt, grid=self.grid(),
            stem=base.stem, blocks=base.blocks, focal_weight=net.focal_weight, lambda_v=net.lambda_v,
            lambda_w=net.lambda_w, focal_gamma=net.focal_gamma, focal_alpha=net.focal_alpha,
            past_decode_weight=net.past_decode_weight, logit_clamp=net.logit_clamp,
            map_dropout_prob=self.raster.map_dropout_prob,
        )

    def rl_config(self) -> RLConfig:
        rl = self.rl
        return RLConfig(
            gamma=rl.gamma, max_steps=rl.max_steps, alpha1=rl.alpha1, alpha2=rl.alpha2, alpha3=rl.alpha3,
            r_rare=rl.r_rare, d_target=rl.d_target, a_min=rl.a_min, a_max=rl.a_max, lr=rl.lr, tau=rl.tau,
            batch_size=rl.batch_size, buffer_capacity=rl.buffer_capacity, target_entropy=rl.target_entropy,
            hidden=rl.hidden, use_kinematics=rl.use_kinematics, warmup_steps=rl.warmup_steps, dt=self.net.dt,
        )

    def bounds(self) -> KinematicBounds:
        return KinematicBounds(a_max=self.sim.a_max, omega_max=self.sim.omega_max)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> AppConfig:
    """
    TOML 설정 파일을 읽습니다. 파일이 없으면 기본값을 사용합니다.

    Raises:
        ConfigError: 파일을 해석할 수 없거나 키/값이 잘못된 경우.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
    data.update(overrides or {})
    try:
        return AppConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
