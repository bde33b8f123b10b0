# /core/prednet.py

"""
PredictionNet: 인코더, 과거/미래 합성곱 RNN, 디코더, 그리고 점유·속도·백트레이스 손실.

텐서 배치 규약: 네트워크 내부는 (N, C, H, W). 디코더 헤드의 5개 채널은
[점유 로짓, 속도(전방, 좌측), 백트레이스(전방, 좌측)] 순서입니다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from core import autodiff as ad
from core.errors import InputError, ShapeError
from core.raster import (GridSpec, NetInput, build_net_input, make_backtrace_targets, rasterize_agents)
from core.types import AgentState, LaneMap, SceneFrame

logger = logging.getLogger(__name__)

HEAD_CHANNELS = 5

# 프리셋: (그리드, 해상도, 스템 폭, 인코더 블록 (폭, 보폭))
PRESETS = {
    "desk": dict(size_px=128, resolution=0.5, stem=8, blocks=((16, 2), (32, 2), (32, 1))),
    "desk_small": dict(size_px=128, resolution=0.5, stem=8, blocks=((16, 2), (32, 2), (32, 2))),
    "full": dict(size_px=512, resolution=0.33, stem=16, blocks=((32, 2), (64, 2), (64, 1))),
}


@dataclass(frozen=True)
class NetConfig:
    """
    PredictionNet 구조 하이퍼파라미터.

    Attributes:
        history_len (int): 과거 스텝 수 T̄.
        horizon (int): 미래 스텝 수 T.
        dt (float): 스텝 간격 [s].
        grid (GridSpec): 입력/출력 격자.
        stem (int): 첫 합성곱 출력 채널.
        blocks (tuple): 인코더 잔차 블록의 (출력 채널, 보폭).
    """
    history_len: int = 6
    horizon: int = 18
    dt: float = 1.0 / 6.0
    grid: GridSpec = field(default_factory=lambda: GridSpec(128, 0.5))
    stem: int = 8
    blocks: tuple = ((16, 2), (32, 2), (32, 1))
    aspp_dilations: tuple = (1, 2, 4)
    focal_weight: float = 0.05
    lambda_v: float = 1.0
    lambda_w: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    past_decode_weight: float = 1.0
    logit_clamp: float = 15.0
    map_dropout_prob: float = 0.1

    def __post_init__(self):
        if self.history_len < 1 or self.horizon < 1 or not self.dt > 0:
            raise InputError(f"invalid net config: T̄={self.history_len}, T={self.horizon}, dt={self.dt}")
        size, latent = self.grid.size_px, self.latent_shape[1]
        if size % (2 * latent) != 0:
            raise InputError(f"latent size {latent} must divide grid {size} with an even factor")

    @classmethod
    def preset(cls, name: str, **overrides) -> NetConfig:
        if name not in PRESETS:
            raise InputError(f"unknown latent preset {name!r}; choose from {sorted(PRESETS)}")
        p = PRESETS[name]
        return cls(grid=GridSpec(p["size_px"], p["resolution"]), stem=p["stem"], blocks=p["blocks"], **overrides)

    @property
    def latent_channels(self) -> int:
        return self.blocks[-1][0]

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        size = self.grid.size_px
        for stride in (2,) + tuple(s for _, s in self.blocks):
            size = (size + 2 - 3) // stride + 1
        return self.latent_channels, size, size

    @property
    def decoder_widths(self) -> tuple[int, int, int]:
        c = self.latent_channels
        return c, max(c // 2, 1), max(c // 4, 1)

    @property
    def upsample_factor(self) -> int:
        return self.grid.size_px // (2 * self.latent_shape[1])


@dataclass
class NetWeights:
    config: NetConfig
    params: dict[str, np.ndarray]

    def astype(self, dtype) -> NetWeights:
        return NetWeights(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> NetWeights:
        return NetWeights(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass
class LatentState:
    h: np.ndarray   # (C, H', W') 또는 배치 (N, C, H', W')


@dataclass
class NetOutput:
    """
    미래 스텝 k = 1..T의 예측 필드. 인덱스 k-1에 저장됩니다.
    학습 모드에서는 과거 디코더 출력도 담습니다.
    """
    occupancy: np.ndarray                  # (T, H, W), (0, 1)
    velocity: np.ndarray                   # (T, 2, H, W)
    backtrace: np.ndarray                  # (T, 2, H, W)
    past_occupancy: np.ndarray | None = None
    past_velocity: np.ndarray | None = None
    past_backtrace: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.occupancy.shape[0]

    def fields(self, k: int) -> np.ndarray:
        """ k번째(1부터) 미래 스텝의 (5, H, W) 필드 스택 [Ô, V̂, Ŵ]. """
        i = k - 1
        return np.concatenate([self.occupancy[i][None], self.velocity[i], self.backtrace[i]], axis=0)


@dataclass
class NetTargets:
    occupancy: np.ndarray                  # (T, H, W)
    velocity: np.ndarray                   # (T, 2, H, W)
    backtrace: np.ndarray                  # (T, 2, H, W)
    past_occupancy: np.ndarray | None = None
    past_velocity: np.ndarray | None = None
    past_backtrace: np.ndarray | None = None


# --- 가중치 초기화 ---

def parameter_shapes(config: NetConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cout, cin, k):
        shapes[f"{name}.w"] = (cout, cin, k, k)
        shapes[f"{name}.b"] = (cout,)

    def tconv(name, cin, cout, k):
        shapes[f"{name}.w"] = (cin, cout, k, k)
        shapes[f"{name}.b"] = (cout,)

    conv("enc.dyn", config.stem, 3, 3)
    conv("enc.static", config.stem, 2, 3)
    cin = config.stem
    for i, (cout, stride) in enumerate(config.blocks):
        conv(f"enc.res{i}.conv1", cout, cin, 3)
        conv(f"enc.res{i}.conv2", cout, cout, 3)
        if cin != cout or stride != 1:
            conv(f"enc.res{i}.skip", cout, cin, 1)
        cin = cout

    c = config.latent_channels
    for rnn in ("past", "future"):
        for gate in ("z", "r", "h"):
            conv(f"{rnn}.gru.{gate}", c, 2 * c, 3)
        for d in config.aspp_dilations:
            conv(f"{rnn}.aspp.d{d}", c, c, 3)

    cin = c
    for i, cout in enumerate(config.decoder_widths):
        tconv(f"dec.res{i}.conv1", cin, cout, 3)
        tconv(f"dec.res{i}.conv2", cout, cout, 3)
        if cin != cout:
            tconv(f"dec.res{i}.skip", cin, cout, 1)
        cin = cout
    tconv("dec.up", cin, HEAD_CHANNELS, 4)
    return shapes


def init_weights(config: NetConfig, rng: np.random.Generator, dtype=np.float32) -> NetWeights:
    """
    He 초기화된 가중치를 만듭니다. ASPP 분기는 작은 값으로 시작하여 잔차 경로가 우세하도록 하고,
    점유 로짓 편향은 사전확률 0.01에 맞춥니다.
    """
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            value = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3] if not name.startswith("dec.") else shape[0] * shape[2] * shape[3]
            value = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            if ".aspp." in name:
                value *= 0.1
        params[name] = value.astype(dtype)
    params["dec.up.b"][0] = -np.log((1 - 0.01) / 0.01)
    return NetWeights(config, params)


# --- 그래프 구성 요소 ---

class _Params:
    """ 그래프에 파라미터를 필요할 때 등록하는 조회기. frozen이면 상수로 등록합니다. """

    def __init__(self, graph: ad.Graph, weights: NetWeights, frozen: bool = False):
        self.graph = graph
        self.weights = weights
        self.frozen = frozen
        self._consts: dict[str, ad.Tensor] = {}

    def __getitem__(self, name: str) -> ad.Tensor:
        if self.frozen:
            if name not in self._consts:
                self._consts[name] = self.graph.const(self.weights.params[name], name=name)
            return self._consts[name]
        return self.graph.param(name, self.weights.params[name])

    def __contains__(self, name: str) -> bool:
        return name in self.weights.params


def _conv(p: _Params, name: str, x, stride=1, padding=1, dilation=1):
    return ad.op_conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, padding=padding, dilation=dilation)


def _tconv(p: _Params, name: str, x, stride=1, padding=1, output_padding=0):
    return ad.transposed_conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, padding=padding,
                                output_padding=output_padding)


def _encode(p: _Params, config: NetConfig, dynamic: ad.Tensor, static: ad.Tensor, steps: int) -> ad.Tensor:
    """
    dynamic (N*steps, 3, H, W), static (N, 2, H, W) → (N*steps, C, H', W').
    정적 특징은 시간 축으로 브로드캐스트되어 더해집니다.
    """
    dyn = ad.relu(_conv(p, "enc.dyn", dynamic, stride=2))
    sta = ad.relu(_conv(p, "enc.static", static, stride=2))
    n = static.shape[0]
    c, h, w = dyn.shape[1:]
    x = ad.add(ad.reshape(dyn, (n, steps, c, h, w)), ad.reshape(sta, (n, 1, c, h, w)))
    x = ad.reshape(x, (n * steps, c, h, w))

    for i, (_, stride) in enumerate(config.blocks):
        y = ad.relu(_conv(p, f"enc.res{i}.conv1", x, stride=stride))
        y = _conv(p, f"enc.res{i}.conv2", y)
        skip = _conv(p, f"enc.res{i}.skip", x, stride=stride, padding=0) if f"enc.res{i}.skip.w" in p else x
        x = ad.relu(ad.add(y, skip))
    return x


def _rnn_step(p: _Params, config: NetConfig, prefix: str, h: ad.Tensor, x: ad.Tensor) -> ad.Tensor:
    """ 합성곱 GRU 갱신 후 잔차 ASPP와 ReLU. """
    xh = ad.concat_channels([x, h])
    z = ad.sigmoid(_conv(p, f"{prefix}.gru.z", xh))
    r = ad.sigmoid(_conv(p, f"{prefix}.gru.r", xh))
    cand = ad.tanh(_conv(p, f"{prefix}.gru.h", ad.concat_channels([x, ad.mul(r, h)])))
    g = ad.add(h, ad.mul(z, ad.sub(cand, h)))
    out = g
    for d in config.aspp_dilations:
        out = ad.add(out, _conv(p, f"{prefix}.aspp.d{d}", g, padding=d, dilation=d))
    return ad.relu(out)


def _decode(p: _Params, config: NetConfig, h: ad.Tensor) -> ad.Tensor:
    """ 잠재 상태 (M, C, H', W') → 헤드 (M, 5, H, W). """
    x = h
    for i in range(len(config.decoder_widths)):
        y = ad.relu(_tconv(p, f"dec.res{i}.conv1", x))
        y = _tconv(p, f"dec.res{i}.conv2", y)
        skip = _tconv(p, f"dec.res{i}.skip", x, padding=0) if f"dec.res{i}.skip.w" in p else x
        x = ad.relu(ad.add(y, skip))
    x = _tconv(p, "dec.up", x, stride=2, padding=1)
    if config.upsample_factor > 1:
        x = ad.upsample_nearest(x, config.upsample_factor)
    return x


@dataclass
class ForwardGraph:
    graph: ad.Graph
    future_heads: ad.Tensor          # (T*N, 5, H, W), 스텝 우선 순서
    past_heads: ad.Tensor | None     # (T̄*N, 5, H, W)
    latent: ad.Tensor                # 현재 시점 h_t (N, C, H', W')
    batch: int


def build_forward(weights: NetWeights, dynamic: np.ndarray, static: np.ndarray, mode: str = "infer",
                  horizon: int | None = None, graph: ad.Graph | None = None, frozen: bool = False) -> ForwardGraph:
    """
    배치 입력으로 순전파 그래프를 만듭니다.

    Args:
        dynamic (np.ndarray): (N, T̄, 3, H, W).
        static (np.ndarray): (N, 1, 2, H, W) 또는 (N, 2, H, W).
        mode (str): 'train'이면 과거 디코더 출력도 만듭니다.
        horizon (int | None): 미래 스텝 수 (기본 config.horizon).
    """
    config = weights.config
    dtype = next(iter(weights.params.values())).dtype
    graph = graph if graph is not None else ad.Graph(dtype)
    p = _Params(graph, weights, frozen=frozen)

    dynamic = np.asarray(dynamic)
    static = np.asarray(static)
    if static.ndim == 5:
        static = static[:, 0]
    n, steps = dynamic.shape[:2]
    size = config.grid.size_px
    if steps != config.history_len or dynamic.shape[2:] != (3, size, size) or static.shape != (n, 2, size, size):
        raise ShapeError("net input does not match config", dynamic.shape, (n, config.history_len, 3, size, size))
    horizon = config.horizon if horizon is None else horizon

    feats = _encode(p, config, graph.const(dynamic.reshape(n * steps, 3, size, size)), graph.const(static), steps)
    c, lh, lw = feats.shape[1:]
    feats = ad.reshape(feats, (n, steps * c, lh, lw))

    h = graph.const(np.zeros((n, c, lh, lw)))
    past_states = []
    for k in range(steps):
        h = _rnn_step(p, config, "past", h, ad.slice_channels(feats, k * c, (k + 1) * c))
        past_states.append(h)
    latent = h

    # 미래 RNN은 현재 시점 인코딩을 매 스텝 같은 문맥으로 사용하고 은닉 상태만 전달합니다
    context = ad.slice_channels(feats, (steps - 1) * c, steps * c)
    future_states = []
    for _ in range(horizon):
        h = _rnn_step(p, config, "future", h, context)
        future_states.append(h)

    future_heads = _decode(p, config, ad.concat_channels(future_states, axis=0))
    past_heads = None
    if mode == "train":
        past_heads = _decode(p, config, ad.concat_channels(past_states, axis=0))
    return ForwardGraph(graph, future_heads, past_heads, latent, n)


def _split_heads(heads: np.ndarray, steps: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    heads = heads.reshape(steps, n, HEAD_CHANNELS, *heads.shape[2:])
    return expit(heads[:, :, 0]), heads[:, :, 1:3], heads[:, :, 3:5]


def outputs_from_graph(fg: ForwardGraph) -> list[NetOutput]:
    n = fg.batch
    t = fg.future_heads.shape[0] // n
    occ, vel, back = _split_heads(fg.future_heads.data.astype(np.float64), t, n)
    past = None
    if fg.past_heads is not None:
        past = _split_heads(fg.past_heads.data.astype(np.float64), fg.past_heads.shape[0] // n, n)
    outs = []
    for i in range(n):
        out = NetOutput(occ[:, i], vel[:, i], back[:, i])
        if past is not None:
            out.past_occupancy, out.past_velocity, out.past_backtrace = past[0][:, i], past[1][:, i], past[2][:, i]
        outs.append(out)
    return outs


def forward(net_input: NetInput | list[NetInput], weights: NetWeights, config: NetConfig | None = None,
            mode: str = "infer", horizon: int | None = None) -> tuple[NetOutput | list[NetOutput], LatentState]:
    """
    PredictionNet 순전파.

    Returns:
        (NetOutput | list[NetOutput], LatentState): 단일 입력이면 단일 출력과 (C, H', W') 잠재 상태.
    """
    if config is not None and config != weights.config:
        raise InputError("config does not match the weights' config")
    single = isinstance(net_input, NetInput)
    inputs = [net_input] if single else list(net_input)
    dynamic = np.stack([x.dynamic for x in inputs])
    static = np.stack([x.static for x in inputs])
    fg = build_forward(weights, dynamic, static, mode=mode, horizon=horizon, frozen=True)
    outs = outputs_from_graph(fg)
    latent = fg.latent.data.astype(np.float64)
    if single:
        return outs[0], LatentState(latent[0])
    return outs, LatentState(latent)


def encode(dynamic_step: np.ndarray, static: np.ndarray, weights: NetWeights) -> np.ndarray:
    """
    한 스텝의 동적 입력 (3, H, W)과 정적 입력 (2, H, W)을 잠재 특징 (C, H', W')으로 인코딩합니다.
    """
    dtype = next(iter(weights.params.values())).dtype
    graph = ad.Graph(dtype)
    p = _Params(graph, weights, frozen=True)
    dyn = graph.const(np.asarray(dynamic_step)[None])
    sta = graph.const(np.asarray(static).reshape(1, 2, *np.shape(dynamic_step)[-2:]))
    return _encode(p, weights.config, dyn, sta, steps=1).data[0]


def rnn_step(h: LatentState, feat: np.ndarray, weights: NetWeights, rnn: str = "past") -> LatentState:
    """ 합성곱 GRU + ASPP 한 스텝. 공간 차원은 보존됩니다. """
    if np.shape(h.h) != np.shape(feat):
        raise ShapeError("rnn_step latent/feature mismatch", np.shape(h.h), np.shape(feat))
    dtype = next(iter(weights.params.values())).dtype
    graph = ad.Graph(dtype)
    p = _Params(graph, weights, frozen=True)
    out = _rnn_step(p, weights.config, rnn, graph.const(np.asarray(h.h)[None]), graph.const(np.asarray(feat)[None]))
    return LatentState(out.data[0])


def decode(h: LatentState, weights: NetWeights) -> np.ndarray:
    dtype = next(iter(weights.params.values())).dtype
    graph = ad.Graph(dtype)
    p = _Params(graph, weights, frozen=True)
    return _decode(p, weights.config, graph.const(np.asarray(h.h)[None])).data[0]


# --- 목표값 ---

def _displacement_agents(prev: SceneFrame | None, frame: SceneFrame, dt: float) -> list[AgentState]:
    """ 속도를 직전 프레임 대비 중심 변위 / Δt로 바꾼 에이전트 목록. """
    if prev is None:
        return list(frame.agents)
    before = prev.by_id()
    out = []
    for agent in frame.agents:
        p = before.get(agent.id)
        if p is None:
            out.append(agent)
            continue
        out.append(agent.moved(vx=(agent.x - p.x) / dt, vy=(agent.y - p.y) / dt))
    return out


def frame_targets(prev: SceneFrame, frame: SceneFrame, ego: AgentState, spec: GridSpec,
                  dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    occ, vel = rasterize_agents(_displacement_agents(prev, frame, dt), ego, spec)
    back = make_backtrace_targets(prev, frame, ego, spec)
    return occ.values, vel.values, back.values


def make_targets(history: list[SceneFrame], future: list[SceneFrame], ego: AgentState, config: NetConfig,
                 with_past: bool = True) -> NetTargets:
    """
    지도 학습 목표값을 만듭니다. 미래 스텝 k의 목표는 프레임 t+k이며, 과거 디코더 j의 목표는
    j번째 과거 프레임의 다음 프레임입니다 (마지막 과거 디코더는 t+1).
    """
    if len(history) != config.history_len or len(future) != config.horizon:
        raise InputError(f"need {config.history_len} past and {config.horizon} future frames, "
                         f"got {len(history)} and {len(future)}")
    frames = list(history) + list(future)
    cache: dict[int, tuple] = {}

    def target(i):
        if i not in cache:
            cache[i] = frame_targets(frames[i - 1], frames[i], ego, config.grid, config.dt)
        return cache[i]

    t_bar = config.history_len
    fut = [target(i) for i in range(t_bar, t_bar + config.horizon)]
    targets = NetTargets(np.stack([f[0] for f in fut]), np.stack([f[1] for f in fut]), np.stack([f[2] for f in fut]))
    if with_past:
        past = [target(i) for i in range(1, t_bar + 1)]
        targets.past_occupancy = np.stack([f[0] for f in past])
        targets.past_velocity = np.stack([f[1] for f in past])
        targets.past_backtrace = np.stack([f[2] for f in past])
    return targets


@dataclass
class TrainingSample:
    history: list[SceneFrame]
    future: list[SceneFrame]
    lanes: LaneMap
    ego_id: int
    sample_id: str = ""

    @property
    def ego(self) -> AgentState:
        ego = self.history[-1].get(self.ego_id)
        if ego is None:
            raise InputError(f"sample {self.sample_id}: ego {self.ego_id} missing at prediction time")
        return ego


def prepare_sample(sample: TrainingSample, config: NetConfig, rng: np.random.Generator,
                   map_dropout_prob: float | None = None) -> tuple[NetInput, NetTargets]:
    prob = config.map_dropout_prob if map_dropout_prob is None else map_dropout_prob
    ego = sample.ego
    net_input = build_net_input(sample.history, sample.lanes, ego, config.grid, prob, rng, config.history_len)
    return net_input, make_targets(sample.history, sample.future, ego, config)


# --- 손실 ---

def loss_graph(fg: ForwardGraph, targets: list[NetTargets], config: NetConfig) -> tuple[ad.Tensor, dict[str, ad.Tensor]]:
    """
    그래프 위의 손실. 배치 평균이며, 스텝에 대해서는 합, 픽셀에 대해서는 평균입니다.
    """
    graph = fg.graph
    n = fg.batch
    terms = {"focal": [], "velocity": [], "backtrace": []}

    def add_terms(heads, occ, vel, back, weight):
        m, _, h, w = heads.shape
        a = config.focal_alpha
        row_w = graph.const(np.full((m, 1, 1, 1), weight / (n * h * w)))
        logits = ad.clip(ad.slice_channels(heads, 0, 1), -config.logit_clamp, config.logit_clamp)
        o_pos = graph.const(-a * occ.reshape(m, 1, h, w))
        ls_pos = ad.log_sigmoid(logits)
        ls_neg = ad.log_sigmoid(ad.scale(logits, -1.0))
        pos = ad.mul(ad.mul(ad.exp(ad.scale(ls_neg, config.focal_gamma)), ls_pos), o_pos)
        o_neg = graph.const(-(1 - a) * (1.0 - occ.reshape(m, 1, h, w)))
        neg = ad.mul(ad.mul(ad.exp(ad.scale(ls_pos, config.focal_gamma)), ls_neg), o_neg)
        focal = ad.add(pos, neg)
        dv = ad.sub(ad.slice_channels(heads, 1, 3), graph.const(vel.reshape(m, 2, h, w)))
        dw = ad.sub(ad.slice_channels(heads, 3, 5), graph.const(back.reshape(m, 2, h, w)))
        terms["focal"].append(ad.reduce_sum(ad.mul(focal, row_w)))
        terms["velocity"].append(ad.reduce_sum(ad.mul(ad.square(dv), row_w)))
        terms["backtrace"].append(ad.reduce_sum(ad.mul(ad.square(dw), row_w)))

    def stack(attr):
        # (N, K, ...) → 스텝 우선 (K*N, ...)
        arr = np.stack([getattr(t, attr) for t in targets], axis=1)
        return arr.reshape(-1, *arr.shape[2:])

    add_terms(fg.future_heads, stack("occupancy"), stack("velocity"), stack("backtrace"), 1.0)
    if fg.past_heads is not None and config.past_decode_weight > 0:
        add_terms(fg.past_heads, stack("past_occupancy"), stack("past_velocity"), stack("past_backtrace"),
                  config.past_decode_weight)

    def total(parts):
        out = parts[0]
        for part in parts[1:]:
            out = ad.add(out, part)
        return out

    breakdown = {
        "focal": ad.scale(total(terms["focal"]), config.focal_weight),
        "velocity": ad.scale(total(terms["velocity"]), config.lambda_v),
        "backtrace": ad.scale(total(terms["backtrace"]), config.lambda_w),
    }
    loss = ad.add(ad.add(breakdown["focal"], breakdown["velocity"]), breakdown["backtrace"])
    breakdown["total"] = loss
    return loss, breakdown


def focal_terms(target: np.ndarray, p: np.ndarray, gamma: float, alpha: float) -> np.ndarray:
    """ 픽셀별 초점 손실: 양성 -α(1-p)^γ log p, 음성 -(1-α)p^γ log(1-p). """
    p = np.asarray(p, dtype=float)
    target = np.asarray(target, dtype=float)
    pos = -alpha * (1 - p) ** gamma * np.log(p)
    neg = -(1 - alpha) * p ** gamma * np.log1p(-p)
    return target * pos + (1 - target) * neg


def loss(outputs: NetOutput, targets: NetTargets, config: NetConfig) -> tuple[float, dict[str, float]]:
    """
    단일 샘플 손실 (numpy). 확률은 로짓 ±logit_clamp에 해당하는 범위로 잘립니다.

    Returns:
        (float, dict): 총손실과 항별 분해 {'focal', 'velocity', 'backtrace', 'total'}.
    """
    pairs = [(outputs.occupancy, outputs.velocity, outputs.backtrace,
              targets.occupancy, targets.velocity, targets.backtrace, 1.0)]
    if outputs.past_occupancy is not None and targets.past_occupancy is not None:
        pairs.append((outputs.past_occupancy, outputs.past_velocity, outputs.past_backtrace,
                      targets.past_occupancy, targets.past_velocity, targets.past_backtrace,
                      config.past_decode_weight))
    lo, hi = expit(-config.logit_clamp), expit(config.logit_clamp)
    focal = vel = back = 0.0
    for o_hat, v_hat, w_hat, o, v, w, weight in pairs:
        if o_hat.shape != o.shape or v_hat.shape != v.shape or w_hat.shape != w.shape:
            raise ShapeError("loss output/target mismatch", o_hat.shape, o.shape)
        pix = o.shape[-1] * o.shape[-2]
        p = np.clip(o_hat, lo, hi)
        focal += weight * focal_terms(o, p, config.focal_gamma, config.focal_alpha).sum() / pix
        vel += weight * ((v - v_hat) ** 2).sum() / pix
        back += weight * ((w - w_hat) ** 2).sum() / pix
    breakdown = {
        "focal": config.focal_weight * focal,
        "velocity": config.lambda_v * vel,
        "backtrace": config.lambda_w * back,
    }
    breakdown["total"] = breakdown["focal"] + breakdown["velocity"] + breakdown["backtrace"]
    return breakdown["total"], breakdown
