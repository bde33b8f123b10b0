# /core/policy.py

"""
고정된 PredictionNet 잠재 상태 위의 소프트 액터-크리틱(SAC) ego 정책.

관측은 잠재 상태 h_t (C, H', W')와 ego 운동 관측 [속력, 직전 가속도, 선행차 간격, 접근 속도]입니다.
특징 추출기(보폭 2 합성곱 3개)는 크리틱 손실로 학습되고, 정책 손실에서는 상수로 취급합니다.
행동은 tanh로 눌린 가우시안을 [a_min, a_max]로 아핀 사상한 가속도 [m/s²]입니다.
"""

from __future__ import annotations

import logging
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core import autodiff as ad
from core.errors import InputError, ShapeError, TrainingDivergedError, UsageError

logger = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
KIN_DIM = 4
_LOG2 = math.log(2.0)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RLConfig:
    gamma: float = 0.95
    max_steps: int = 48
    alpha1: float = -0.1            # |Δa| 가중치
    alpha2: float = -0.05           # |Δv| 가중치
    alpha3: float = 0.5             # 간격 형상 가중치
    r_rare: float = -1.0
    d_target: float = 20.0
    a_min: float = -6.0
    a_max: float = 4.0
    lr: float = 3e-4
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 50000
    target_entropy: float = -1.0
    init_temperature: float = 0.1
    hidden: int = 64
    feature_channels: tuple = (16, 16, 16)
    use_kinematics: bool = True
    warmup_steps: int = 200
    updates_per_step: int = 1
    dt: float = 1.0 / 6.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InputError(f"gamma must be in (0, 1), got {self.gamma}")
        if not self.a_min < self.a_max:
            raise InputError(f"a_min must be below a_max, got [{self.a_min}, {self.a_max}]")
        if self.alpha1 > 0 or self.alpha2 > 0 or self.alpha3 < 0:
            raise InputError("alpha1/alpha2 must be penalties (<= 0) and alpha3 >= 0")
        if self.max_steps < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise InputError("max_steps, batch_size and buffer_capacity must be positive")

    @property
    def action_scale(self) -> float:
        return 0.5 * (self.a_max - self.a_min)

    @property
    def action_bias(self) -> float:
        return 0.5 * (self.a_max + self.a_min)

    def to_env(self, a_norm):
        return self.action_bias + self.action_scale * np.asarray(a_norm)

    def to_norm(self, accel):
        return (np.asarray(accel, dtype=float) - self.action_bias) / self.action_scale


@dataclass
class PolicyWeights:
    """
    정책 관련 파라미터 전체. target은 크리틱과 특징 추출기의 느린 사본입니다.
    """
    config: RLConfig
    latent_shape: tuple[int, int, int]
    params: dict[str, np.ndarray]
    target: dict[str, np.ndarray]
    log_temperature: float = math.log(0.1)

    @property
    def temperature(self) -> float:
        return math.exp(self.log_temperature)

    def copy(self) -> PolicyWeights:
        return PolicyWeights(self.config, self.latent_shape, {k: v.copy() for k, v in self.params.items()},
                             {k: v.copy() for k, v in self.target.items()}, self.log_temperature)


def feature_size(latent_shape, channels=(16, 16, 16)) -> int:
    _, h, w = latent_shape
    for _ in channels:
        h = ad.conv_output_size(h, 3, 2, 1, 1)
        w = ad.conv_output_size(w, 3, 2, 1, 1)
    return channels[-1] * h * w


def init_policy(config: RLConfig, latent_shape, rng: np.random.Generator, dtype=np.float64) -> PolicyWeights:
    params: dict[str, np.ndarray] = {}
    cin = latent_shape[0]
    for i, cout in enumerate(config.feature_channels):
        params[f"feat.c{i}.w"] = rng.normal(0, math.sqrt(2.0 / (cin * 9)), (cout, cin, 3, 3))
        params[f"feat.c{i}.b"] = np.zeros(cout)
        cin = cout
    obs_dim = feature_size(latent_shape, config.feature_channels) + (KIN_DIM if config.use_kinematics else 0)

    def mlp(prefix, n_in, n_out):
        sizes = [n_in, config.hidden, config.hidden, n_out]
        for i in range(3):
            if i < 2:
                params[f"{prefix}.l{i}.w"] = rng.normal(0, math.sqrt(2.0 / sizes[i]), (sizes[i], sizes[i + 1]))
            else:
                params[f"{prefix}.l{i}.w"] = rng.uniform(-3e-3, 3e-3, (sizes[i], sizes[i + 1]))
            params[f"{prefix}.l{i}.b"] = np.zeros(sizes[i + 1])

    mlp("pi", obs_dim, 2)
    mlp("q1", obs_dim + 1, 1)
    mlp("q2", obs_dim + 1, 1)
    params = {k: v.astype(dtype) for k, v in params.items()}
    target = {k: v.copy() for k, v in params.items() if not k.startswith("pi.")}
    return PolicyWeights(config, tuple(latent_shape), params, target, math.log(config.init_temperature))


# --- 그래프 구성 요소 ---

class _Lookup:
    def __init__(self, graph: ad.Graph, values: dict[str, np.ndarray], trainable: tuple[str, ...] = ()):
        self.graph = graph
        self.values = values
        self.trainable = trainable
        self._consts: dict[str, ad.Tensor] = {}

    def __getitem__(self, name: str) -> ad.Tensor:
        if name.startswith(self.trainable) and self.trainable:
            return self.graph.param(name, self.values[name])
        if name not in self._consts:
            self._consts[name] = self.graph.const(self.values[name], name=name)
        return self._consts[name]


def _features(p: _Lookup, h: ad.Tensor, kin: ad.Tensor | None, n_layers: int) -> ad.Tensor:
    x = h
    for i in range(n_layers):
        x = ad.relu(ad.op_conv2d(x, p[f"feat.c{i}.w"], p[f"feat.c{i}.b"], stride=2, padding=1))
    x = ad.reshape(x, (x.shape[0], -1))
    if kin is not None:
        x = ad.concat_channels([x, kin], axis=1)
    return x


def _mlp(p: _Lookup, prefix: str, x: ad.Tensor) -> ad.Tensor:
    x = ad.relu(ad.dense(x, p[f"{prefix}.l0.w"], p[f"{prefix}.l0.b"]))
    x = ad.relu(ad.dense(x, p[f"{prefix}.l1.w"], p[f"{prefix}.l1.b"]))
    return ad.dense(x, p[f"{prefix}.l2.w"], p[f"{prefix}.l2.b"])


def _check_latent(h: np.ndarray, weights: PolicyWeights):
    if h.shape[1:] != tuple(weights.latent_shape):
        raise ShapeError("latent does not match policy", h.shape[1:], weights.latent_shape)


def _kin_tensor(graph: ad.Graph, kin, config: RLConfig, batch: int) -> ad.Tensor | None:
    if not config.use_kinematics:
        return None
    return graph.const(np.asarray(kin, dtype=float).reshape(batch, KIN_DIM))


def features(h, weights: PolicyWeights, kin=None, target: bool = False) -> np.ndarray:
    """
    잠재 상태 (C, H', W') 또는 배치 (B, C, H', W') → 관측 벡터 (합성곱 특징 + 운동 관측).
    """
    h = np.asarray(h, dtype=float)
    single = h.ndim == 3
    h = h[None] if single else h
    _check_latent(h, weights)
    graph = ad.Graph(np.float64)
    p = _Lookup(graph, weights.target if target else weights.params)
    kin_t = None
    if weights.config.use_kinematics:
        kin = np.zeros((h.shape[0], KIN_DIM)) if kin is None else kin
        kin_t = _kin_tensor(graph, kin, weights.config, h.shape[0])
    out = _features(p, graph.const(h), kin_t, len(weights.config.feature_channels)).data
    return out[0] if single else out


def kinematic_observation(speed: float, prev_accel: float, gap: float | None, closing_speed: float) -> np.ndarray:
    """ 정규화된 ego 운동 관측. 선행 차량이 없으면 간격 1, 접근 속도 0. """
    if gap is None:
        return np.array([speed / 10.0, prev_accel / 6.0, 1.0, 0.0])
    return np.array([speed / 10.0, prev_accel / 6.0, min(gap, 50.0) / 50.0, closing_speed / 10.0])


# --- 행동 분포 ---

def _squash_correction(u):
    """ log(1 - tanh(u)^2) = 2(log 2 - u - softplus(-2u)) """
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_head(obs: np.ndarray, weights: PolicyWeights) -> tuple[np.ndarray, np.ndarray]:
    graph = ad.Graph(np.float64)
    p = _Lookup(graph, weights.params)
    out = _mlp(p, "pi", graph.const(np.atleast_2d(obs))).data
    return out[:, 0], np.clip(out[:, 1], LOG_STD_MIN, LOG_STD_MAX)


def log_prob(accel, mean, log_std, config: RLConfig) -> np.ndarray:
    """
    환경 가속도의 로그 밀도 (변수 변환 보정 포함).
    """
    a_norm = np.clip(config.to_norm(accel), -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(a_norm)
    eps = (u - mean) / np.exp(log_std)
    base = -0.5 * eps ** 2 - log_std - 0.5 * _LOG_2PI
    return base - _squash_correction(u) - math.log(config.action_scale)


def act(obs: np.ndarray, weights: PolicyWeights, mode: str = "sample",
        rng: np.random.Generator | None = None) -> tuple[float | np.ndarray, float | np.ndarray]:
    """
    관측 벡터에서 가속도를 고릅니다.

    Args:
        mode (str): 'sample'은 재매개변수화 샘플, 'mean'은 결정적 평균 행동.

    Returns:
        (가속도 [m/s²], 로그 확률): 단일 관측이면 스칼라.
    """
    config = weights.config
    single = np.ndim(obs) == 1
    mean, log_std = gaussian_head(obs, weights)
    if mode == "mean":
        u = mean
    elif mode == "sample":
        if rng is None:
            raise UsageError("sample mode needs an rng")
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    else:
        raise UsageError(f"unknown action mode {mode!r}")
    eps = (u - mean) / np.exp(log_std)
    lp = -0.5 * eps ** 2 - log_std - 0.5 * _LOG_2PI - _squash_correction(u) - math.log(config.action_scale)
    accel = config.to_env(np.tanh(u))
    if single:
        return float(accel[0]), float(lp[0])
    return accel, lp


# --- 보상 ---

def gap_shaping(d: float | None, d_target: float) -> float:
    """ -|d - d_target| / d_target 를 [-1, 0]으로 자른 값. 선행 차량이 없으면 0. """
    if d is None:
        return 0.0
    if d < 0:
        raise InputError(f"lead distance must be non-negative, got {d}")
    return max(-abs(d - d_target) / d_target, -1.0)


def reward(delta_accel: float, delta_speed: float, lead_distance: float | None, rare_event: bool,
           config: RLConfig) -> float:
    """ r = α1|Δa| + α2|Δv| + α3·shape(d) + r_rare·[사건] """
    r = config.alpha1 * abs(delta_accel) + config.alpha2 * abs(delta_speed)
    r += config.alpha3 * gap_shaping(lead_distance, config.d_target)
    if rare_event:
        r += config.r_rare
    return float(r)


def reward_lower_bound(config: RLConfig) -> float:
    """ 가속도 범위와 형상 클램프로 정해지는 한 스텝 보상의 하한. """
    span_a = config.a_max - config.a_min
    span_v = max(abs(config.a_min), abs(config.a_max)) * config.dt
    return config.alpha1 * span_a + config.alpha2 * span_v - config.alpha3 + config.r_rare


# --- 재현 버퍼 ---

@dataclass
class Batch:
    h: np.ndarray          # (B, C, H', W')
    kin: np.ndarray        # (B, 4)
    action: np.ndarray     # (B,) 환경 가속도
    reward: np.ndarray     # (B,)
    h_next: np.ndarray
    kin_next: np.ndarray
    done: np.ndarray       # (B,) {0, 1}

    def __len__(self) -> int:
        return len(self.reward)


class ReplayBuffer:
    """
    고정 용량 순환 버퍼. 잠재 상태는 float16으로 저장합니다.
    add는 버퍼의 유일한 삽입 지점이며 여러 환경이 같은 버퍼를 채울 때 순서대로 호출되어야 합니다.
    """

    def __init__(self, capacity: int, latent_shape, dtype=np.float16):
        self.capacity = capacity
        self.h = np.zeros((capacity, *latent_shape), dtype=dtype)
        self.h_next = np.zeros((capacity, *latent_shape), dtype=dtype)
        self.kin = np.zeros((capacity, KIN_DIM))
        self.kin_next = np.zeros((capacity, KIN_DIM))
        self.action = np.zeros(capacity)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, h, kin, action: float, reward_value: float, h_next, kin_next, done: bool):
        i = self.cursor
        self.h[i] = h
        self.kin[i] = kin
        self.action[i] = action
        self.reward[i] = reward_value
        self.h_next[i] = h_next
        self.kin_next[i] = kin_next
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.h[idx].astype(np.float64), self.kin[idx], self.action[idx], self.reward[idx],
                     self.h_next[idx].astype(np.float64), self.kin_next[idx], self.done[idx])


# --- SAC 손실 ---

def critic_targets(batch: Batch, weights: PolicyWeights, eps: np.ndarray) -> np.ndarray:
    """
    y = r + γ(1 - done)(min(Q'1, Q'2)(s', a') - temperature·logπ(a'|s')),
    a'는 현재 정책에서 잡음 eps로 재매개변수화하여 뽑습니다.
    """
    config = weights.config
    obs_next = features(batch.h_next, weights, batch.kin_next)
    mean, log_std = gaussian_head(obs_next, weights)
    u = mean + np.exp(log_std) * eps
    lp = -0.5 * eps ** 2 - log_std - 0.5 * _LOG_2PI - _squash_correction(u) - math.log(config.action_scale)

    graph = ad.Graph(np.float64)
    p = _Lookup(graph, weights.target)
    tobs = _features(p, graph.const(batch.h_next), _kin_tensor(graph, batch.kin_next, config, len(batch)),
                     len(config.feature_channels))
    qa = ad.concat_channels([tobs, graph.const(np.tanh(u)[:, None])], axis=1)
    q_min = np.minimum(_mlp(p, "q1", qa).data[:, 0], _mlp(p, "q2", qa).data[:, 0])
    return batch.reward + config.gamma * (1.0 - batch.done) * (q_min - weights.temperature * lp)


def critic_loss_graph(batch: Batch, weights: PolicyWeights, y: np.ndarray) -> tuple[ad.Graph, ad.Tensor]:
    """ 특징 추출기와 두 크리틱을 학습 파라미터로 하는 회귀 손실 그래프. """
    config = weights.config
    graph = ad.Graph(np.float64)
    p = _Lookup(graph, weights.params, trainable=("feat.", "q1.", "q2."))
    obs = _features(p, graph.const(batch.h), _kin_tensor(graph, batch.kin, config, len(batch)),
                    len(config.feature_channels))
    qa = ad.concat_channels([obs, graph.const(config.to_norm(batch.action)[:, None])], axis=1)
    target = graph.const(np.asarray(y, dtype=float)[:, None])
    loss = ad.add(ad.mean(ad.square(ad.sub(_mlp(p, "q1", qa), target))),
                  ad.mean(ad.square(ad.sub(_mlp(p, "q2", qa), target))))
    return graph, loss


def actor_loss_graph(batch: Batch, weights: PolicyWeights, eps: np.ndarray) -> tuple[ad.Graph, ad.Tensor, np.ndarray]:
    """
    재매개변수화된 정책 손실 mean(temperature·logπ - min(Q1, Q2)).

    Returns:
        (graph, loss, logπ): logπ는 온도 갱신에 쓰입니다.
    """
    config = weights.config
    obs = features(batch.h, weights, batch.kin)
    graph = ad.Graph(np.float64)
    p = _Lookup(graph, weights.params, trainable=("pi.",))
    head = _mlp(p, "pi", graph.const(obs))
    mean = ad.slice_channels(head, 0, 1)
    log_std = ad.clip(ad.slice_channels(head, 1, 2), LOG_STD_MIN, LOG_STD_MAX)
    e = graph.const(np.asarray(eps, dtype=float).reshape(-1, 1))
    u = ad.add(mean, ad.mul(ad.exp(log_std), e))
    # log(1 - tanh²u) = 2(log 2 - u - softplus(-2u))
    squash = ad.scale(ad.sub(ad.sub(_LOG2, u), ad.softplus(ad.scale(u, -2.0))), 2.0)
    lp = ad.sub(ad.sub(ad.scale(ad.square(e), -0.5), log_std), squash)
    lp = ad.sub(lp, 0.5 * _LOG_2PI + math.log(config.action_scale))

    qa = ad.concat_channels([graph.const(obs), ad.tanh(u)], axis=1)
    q = ad.minimum(_mlp(p, "q1", qa), _mlp(p, "q2", qa))
    loss = ad.mean(ad.sub(ad.scale(lp, weights.temperature), q))
    return graph, loss, lp.data[:, 0].copy()


@dataclass
class SacOptimizers:
    critic: ad.Adam
    actor: ad.Adam
    temperature: ad.Adam
    updates: int = 0

    @classmethod
    def create(cls, config: RLConfig) -> SacOptimizers:
        return cls(ad.Adam(config.lr), ad.Adam(config.lr), ad.Adam(config.lr))


@dataclass
class SacDiagnostics:
    critic_loss: float
    policy_loss: float
    entropy: float
    temperature: float
    extra: dict = field(default_factory=dict)


def _dump_batch(batch: Batch, dump_dir: str | Path | None, update_id: int) -> str:
    directory = Path(dump_dir) if dump_dir is not None else Path(tempfile.mkdtemp(prefix="sac_dump_"))
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"sac_batch_{update_id:06d}.npz"
    np.savez(path, h=batch.h, kin=batch.kin, action=batch.action, reward=batch.reward,
             h_next=batch.h_next, kin_next=batch.kin_next, done=batch.done)
    return str(path)


def sac_update(batch: Batch, weights: PolicyWeights, rng: np.random.Generator,
               optimizers: SacOptimizers | None = None, dump_dir: str | Path | None = None) -> SacDiagnostics:
    """
    SAC 한 번의 갱신 (크리틱 → 정책 → 온도 → 목표망). weights는 제자리에서 갱신됩니다.
    """
    if len(batch) == 0:
        raise UsageError("sac_update needs a nonempty batch")
    _check_latent(batch.h, weights)
    config = weights.config
    optimizers = optimizers if optimizers is not None else SacOptimizers.create(config)
    update_id = optimizers.updates

    y = critic_targets(batch, weights, rng.standard_normal(len(batch)))
    graph, critic_loss = critic_loss_graph(batch, weights, y)
    critic_grads = ad.backward(graph, critic_loss)

    eps = rng.standard_normal(len(batch))
    graph, policy_loss, lp = actor_loss_graph(batch, weights, eps)
    actor_grads = ad.backward(graph, policy_loss)

    values = (float(critic_loss.data), float(policy_loss.data), float(np.mean(lp)))
    if not all(np.isfinite(values)):
        path = _dump_batch(batch, dump_dir, update_id)
        raise TrainingDivergedError("non-finite SAC loss", update_id, path)

    optimizers.critic.step(weights.params, critic_grads)
    optimizers.actor.step(weights.params, actor_grads)

    # 온도 손실 -log_temperature·mean(logπ + target_entropy)의 기울기
    temp = {"log_temperature": np.array(weights.log_temperature)}
    optimizers.temperature.step(temp, {"log_temperature": np.array(-np.mean(lp + config.target_entropy))})
    weights.log_temperature = float(temp["log_temperature"])

    for name, value in weights.target.items():
        value *= (1.0 - config.tau)
        value += config.tau * weights.params[name]
    optimizers.updates += 1
    return SacDiagnostics(values[0], values[1], float(-np.mean(lp)), weights.temperature)
