# /core/autodiff.py

"""
역방향 자동 미분 코어.

Graph는 연산 기록(연산 종류, 입력 노드, 속성)을 위상 순서대로 보관하는 테이프입니다.
노드는 생성 즉시 순전파 값을 계산하며, recompute()로 현재 파라미터 값에 대해 전체
순전파를 다시 실행할 수 있습니다 (수치 미분 검사에 사용).

합성곱은 커널을 뒤집지 않는 상호상관(cross-correlation)이며, 전치 합성곱은 같은 기하를 가진
합성곱의 입력 기울기 사상(adjoint)입니다.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from core.errors import ShapeError, UsageError

logger = logging.getLogger(__name__)

# 자료형별 검증 허용 오차
TOLERANCE = {np.dtype(np.float64): 1e-4, np.dtype(np.float32): 1e-2}


class Tensor:
    """ 그래프의 노드. 잎 노드(파라미터/상수)는 kind가 'param' 또는 'const'입니다. """
    __slots__ = ("graph", "index", "kind", "inputs", "attrs", "data", "requires_grad", "name")

    def __init__(self, graph: Graph, kind: str, data: np.ndarray, inputs=(), attrs=None,
                 requires_grad: bool = False, name: str | None = None):
        self.graph = graph
        self.index = len(graph.nodes)
        self.kind = kind
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.data = data
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(kind={self.kind!r}, shape={self.shape}, name={self.name!r})"

    # 편의 연산자
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


@dataclass
class OpDef:
    forward: Callable
    backward: Callable


OPS: dict[str, OpDef] = {}


def register(kind: str):
    def deco(cls):
        OPS[kind] = OpDef(cls.forward, cls.backward)
        return cls
    return deco


@dataclass
class Graph:
    dtype: np.dtype = np.float64
    nodes: list[Tensor] = field(default_factory=list)
    parameters: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        self.dtype = np.dtype(self.dtype)

    def param(self, name: str, array) -> Tensor:
        """ 학습 가능한 잎 노드를 등록합니다. 같은 이름은 한 번만 등록됩니다. """
        if name in self.parameters:
            return self.parameters[name]
        node = Tensor(self, "param", np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True, name=name)
        self.nodes.append(node)
        self.parameters[name] = node
        return node

    def const(self, array, name: str | None = None) -> Tensor:
        node = Tensor(self, "const", np.asarray(array, dtype=self.dtype), name=name)
        self.nodes.append(node)
        return node

    def apply(self, kind: str, inputs, **attrs) -> Tensor:
        inputs = [self._lift(x) for x in inputs]
        data = OPS[kind].forward(*[x.data for x in inputs], **attrs)
        node = Tensor(self, kind, data, inputs, attrs, requires_grad=any(x.requires_grad for x in inputs))
        self.nodes.append(node)
        return node

    def _lift(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.graph is not self:
                raise UsageError("tensor belongs to a different graph")
            return x
        return self.const(x)

    def recompute(self):
        """ 잎 노드의 현재 값으로 모든 연산 노드를 다시 계산합니다. """
        for node in self.nodes:
            if node.kind in ("param", "const"):
                continue
            node.data = OPS[node.kind].forward(*[x.data for x in node.inputs], **node.attrs)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """ 브로드캐스트된 기울기를 원래 형상으로 합산 축소합니다. """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- 합성곱 기하 ---

def conv_output_size(size: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    win = sliding_window_view(xp, (eh, ew), axis=(2, 3))
    return win[:, :, :(ho - 1) * stride + 1:stride, :(wo - 1) * stride + 1:stride, ::dilation, ::dilation]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_forward(x, w, stride, padding, dilation):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d input/kernel mismatch", x.shape, w.shape)
    _, _, h, wd = x.shape
    _, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(wd, kw, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d produces empty output", x.shape, w.shape)
    win = _windows(_pad(x, padding), kh, kw, stride, dilation, ho, wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_input_grad(gy, w, x_shape, stride, padding, dilation):
    n, c, h, wd = x_shape
    _, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    col = np.tensordot(gy, w, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            gxp[:, :, r0:r0 + (ho - 1) * stride + 1:stride, c0:c0 + (wo - 1) * stride + 1:stride] += \
                col[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, padding:padding + h, padding:padding + wd]


def _conv_weight_grad(x, gy, kernel_shape, stride, padding, dilation):
    _, _, kh, kw = kernel_shape
    win = _windows(_pad(x, padding), kh, kw, stride, dilation, gy.shape[2], gy.shape[3])
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))


@register("conv2d")
class _Conv2d:
    @staticmethod
    def forward(x, w, b=None, stride=1, padding=0, dilation=1):
        out = _conv_forward(x, w, stride, padding, dilation)
        if b is not None:
            out = out + b.reshape(1, -1, 1, 1)
        return out

    @staticmethod
    def backward(g, out, x, w, b=None, stride=1, padding=0, dilation=1):
        gx = _conv_input_grad(g, w, x.shape, stride, padding, dilation)
        gw = _conv_weight_grad(x, g, w.shape, stride, padding, dilation)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))


def transposed_output_size(size: int, k: int, stride: int, padding: int, dilation: int, output_padding: int) -> int:
    return (size - 1) * stride - 2 * padding + dilation * (k - 1) + 1 + output_padding


@register("transposed_conv2d")
class _TransposedConv2d:
    @staticmethod
    def forward(y, w, b=None, stride=1, padding=0, dilation=1, output_padding=0):
        if y.ndim != 4 or w.ndim != 4 or y.shape[1] != w.shape[0]:
            raise ShapeError("transposed_conv2d input/kernel mismatch", y.shape, w.shape)
        if output_padding >= stride and output_padding > 0:
            raise ShapeError("output_padding must be smaller than stride", (output_padding,), (stride,))
        n, _, hi, wi = y.shape
        _, c, kh, kw = w.shape
        h = transposed_output_size(hi, kh, stride, padding, dilation, output_padding)
        wd = transposed_output_size(wi, kw, stride, padding, dilation, output_padding)
        if h <= 0 or wd <= 0:
            raise ShapeError("transposed_conv2d produces empty output", y.shape, w.shape)
        out = _conv_input_grad(y, w, (n, c, h, wd), stride, padding, dilation)
        if b is not None:
            out = out + b.reshape(1, -1, 1, 1)
        return np.ascontiguousarray(out)

    @staticmethod
    def backward(g, out, y, w, b=None, stride=1, padding=0, dilation=1, output_padding=0):
        gy = _conv_forward(g, w, stride, padding, dilation)
        gw = _conv_weight_grad(g, y, w.shape, stride, padding, dilation)
        if b is None:
            return gy, gw
        return gy, gw, g.sum(axis=(0, 2, 3))


@register("relu")
class _Relu:
    @staticmethod
    def forward(x):
        return np.maximum(x, 0)

    @staticmethod
    def backward(g, out, x):
        return (g * (x > 0),)


@register("sigmoid")
class _Sigmoid:
    @staticmethod
    def forward(x):
        return expit(x)

    @staticmethod
    def backward(g, out, x):
        return (g * out * (1 - out),)


@register("tanh")
class _Tanh:
    @staticmethod
    def forward(x):
        return np.tanh(x)

    @staticmethod
    def backward(g, out, x):
        return (g * (1 - out * out),)


@register("exp")
class _Exp:
    @staticmethod
    def forward(x):
        return np.exp(x)

    @staticmethod
    def backward(g, out, x):
        return (g * out,)


@register("log")
class _Log:
    @staticmethod
    def forward(x):
        return np.log(x)

    @staticmethod
    def backward(g, out, x):
        return (g / x,)


@register("softplus")
class _Softplus:
    @staticmethod
    def forward(x):
        return np.logaddexp(0, x)

    @staticmethod
    def backward(g, out, x):
        return (g * expit(x),)


@register("square")
class _Square:
    @staticmethod
    def forward(x):
        return x * x

    @staticmethod
    def backward(g, out, x):
        return (2 * g * x,)


@register("clip")
class _Clip:
    @staticmethod
    def forward(x, lo=-np.inf, hi=np.inf):
        return np.clip(x, lo, hi)

    @staticmethod
    def backward(g, out, x, lo=-np.inf, hi=np.inf):
        return (g * ((x >= lo) & (x <= hi)),)


@register("add")
class _Add:
    @staticmethod
    def forward(a, b):
        return a + b

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


@register("sub")
class _Sub:
    @staticmethod
    def forward(a, b):
        return a - b

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


@register("elementwise_mul")
class _Mul:
    @staticmethod
    def forward(a, b):
        return a * b

    @staticmethod
    def backward(g, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("scale")
class _Scale:
    @staticmethod
    def forward(x, factor=1.0):
        return x * factor

    @staticmethod
    def backward(g, out, x, factor=1.0):
        return (g * factor,)


@register("minimum")
class _Minimum:
    @staticmethod
    def forward(a, b):
        return np.minimum(a, b)

    @staticmethod
    def backward(g, out, a, b):
        pick_a = a <= b
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)


@register("dense")
class _Dense:
    @staticmethod
    def forward(x, w, b=None):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError("dense input/weight mismatch", x.shape, w.shape)
        out = x @ w
        return out if b is None else out + b

    @staticmethod
    def backward(g, out, x, w, b=None):
        grads = (g @ w.T, x.T @ g)
        return grads if b is None else grads + (g.sum(axis=0),)


@register("reduce_sum")
class _ReduceSum:
    @staticmethod
    def forward(x, axis=None):
        # numpy의 연속 축 합산은 쌍별(pairwise) 합산입니다
        return np.asarray(np.sum(x, axis=axis))

    @staticmethod
    def backward(g, out, x, axis=None):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)


@register("concat_channels")
class _Concat:
    @staticmethod
    def forward(*xs, axis=1):
        ref = xs[0].shape
        for x in xs[1:]:
            if x.ndim != len(ref) or any(x.shape[k] != ref[k] for k in range(len(ref)) if k != axis):
                raise ShapeError("concat shape mismatch", ref, x.shape)
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(g, out, *xs, axis=1):
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


@register("slice_channels")
class _Slice:
    @staticmethod
    def forward(x, start=0, stop=None, axis=1):
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        return x[tuple(index)]

    @staticmethod
    def backward(g, out, x, start=0, stop=None, axis=1):
        gx = np.zeros_like(x)
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        gx[tuple(index)] = g
        return (gx,)


@register("reshape")
class _Reshape:
    @staticmethod
    def forward(x, shape=()):
        return x.reshape(shape)

    @staticmethod
    def backward(g, out, x, shape=()):
        return (g.reshape(x.shape),)


@register("upsample_nearest")
class _Upsample:
    @staticmethod
    def forward(x, factor=2):
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    @staticmethod
    def backward(g, out, x, factor=2):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)


# --- 연산 래퍼 ---

def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Tensor):
            return x.graph
    raise UsageError("at least one operand must be a graph tensor")


def op_conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
              dilation: int = 1) -> Tensor:
    """ N×C×H×W 입력과 K×C×kh×kw 커널의 2D 상호상관. """
    inputs = [x, kernel] if bias is None else [x, kernel, bias]
    return _graph_of(x).apply("conv2d", inputs, stride=stride, padding=padding, dilation=dilation)


def transposed_conv2d(y: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0,
                      dilation: int = 1, output_padding: int = 0) -> Tensor:
    """ 커널 형상은 Cin×Cout×kh×kw 입니다 (같은 기하의 op_conv2d와 수반 관계). """
    inputs = [y, kernel] if bias is None else [y, kernel, bias]
    return _graph_of(y).apply("transposed_conv2d", inputs, stride=stride, padding=padding,
                              dilation=dilation, output_padding=output_padding)


def relu(x): return _graph_of(x).apply("relu", [x])
def sigmoid(x): return _graph_of(x).apply("sigmoid", [x])
def tanh(x): return _graph_of(x).apply("tanh", [x])
def exp(x): return _graph_of(x).apply("exp", [x])
def log(x): return _graph_of(x).apply("log", [x])
def softplus(x): return _graph_of(x).apply("softplus", [x])
def square(x): return _graph_of(x).apply("square", [x])
def add(a, b): return _graph_of(a, b).apply("add", [a, b])
def sub(a, b): return _graph_of(a, b).apply("sub", [a, b])
def mul(a, b): return _graph_of(a, b).apply("elementwise_mul", [a, b])
def minimum(a, b): return _graph_of(a, b).apply("minimum", [a, b])
def scale(x, factor: float): return _graph_of(x).apply("scale", [x], factor=float(factor))
def clip(x, lo: float, hi: float): return _graph_of(x).apply("clip", [x], lo=lo, hi=hi)
def reshape(x, shape): return _graph_of(x).apply("reshape", [x], shape=tuple(shape))
def upsample_nearest(x, factor: int): return _graph_of(x).apply("upsample_nearest", [x], factor=int(factor))


def dense(x, w, b=None):
    return _graph_of(x).apply("dense", [x, w] if b is None else [x, w, b])


def reduce_sum(x, axis=None):
    return _graph_of(x).apply("reduce_sum", [x], axis=axis)


def mean(x):
    return scale(reduce_sum(x), 1.0 / x.data.size)


def concat_channels(xs, axis: int = 1):
    return _graph_of(*xs).apply("concat_channels", list(xs), axis=axis)


def slice_channels(x, start: int, stop: int, axis: int = 1):
    return _graph_of(x).apply("slice_channels", [x], start=start, stop=stop, axis=axis)


def log_sigmoid(x):
    """ log σ(x) = -softplus(-x) (수치적으로 안정) """
    return scale(softplus(scale(x, -1.0)), -1.0)


_SUITE = {
    "transposed_conv2d": transposed_conv2d,
    "relu": relu,
    "sigmoid": sigmoid,
    "add": add,
    "elementwise_mul": mul,
    "dense": dense,
    "reduce_sum": reduce_sum,
    "concat_channels": lambda *xs, **kw: concat_channels(xs, **kw),
}


def op_suite(kind: str, *inputs, **attrs) -> Tensor:
    """ 이름으로 연산을 적용합니다. """
    if kind not in _SUITE:
        raise UsageError(f"unknown operator {kind!r}; available: {sorted(_SUITE)}")
    return _SUITE[kind](*inputs, **attrs)


# --- 역전파 ---

def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """
    스칼라 손실에서 모든 파라미터의 기울기를 계산합니다.

    Returns:
        dict[str, np.ndarray]: 파라미터 이름 → 기울기. 손실에서 도달할 수 없는 파라미터는 0.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
    for node in reversed(graph.nodes[:loss.index + 1]):
        g = grads.pop(node.index, None)
        if g is None or node.kind in ("param", "const"):
            if node.kind == "param" and g is not None:
                grads[node.index] = g
            continue
        if not node.requires_grad:
            continue
        in_grads = OPS[node.kind].backward(g, node.data, *[x.data for x in node.inputs], **node.attrs)
        for x, gx in zip(node.inputs, in_grads):
            if not x.requires_grad:
                continue
            if x.index in grads:
                grads[x.index] = grads[x.index] + gx
            else:
                grads[x.index] = gx
    return {
        name: np.asarray(grads.get(p.index, np.zeros_like(p.data)), dtype=p.dtype).reshape(p.shape)
        for name, p in graph.parameters.items()
    }


_KINK_OPS = ("relu", "clip", "minimum")


def _kink_signature(graph: Graph) -> list[np.ndarray]:
    sig = []
    for node in graph.nodes:
        if node.kind == "relu":
            sig.append(node.inputs[0].data > 0)
        elif node.kind == "clip":
            x = node.inputs[0].data
            sig.append((x >= node.attrs["lo"]) & (x <= node.attrs["hi"]))
        elif node.kind == "minimum":
            sig.append(node.inputs[0].data <= node.inputs[1].data)
    return sig


def gradient_check(graph: Graph, loss: Tensor, step: float = 1e-5, max_entries: int | None = 6,
                   rng: np.random.Generator | None = None, floor: float = 1e-8,
                   grads: dict[str, np.ndarray] | None = None) -> float:
    """
    해석적 기울기를 중앙 차분과 비교합니다.

    파라미터마다 최대 max_entries개의 원소를 무작위로 골라 검사합니다 (None이면 모든 원소). 섭동이 ReLU/clip/minimum의
    분기를 바꾸는 원소는 미분 불가능점이므로 제외합니다.

    Returns:
        float: max |analytic - numeric| / max(floor, |numeric|).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic = grads if grads is not None else backward(graph, loss)
    baseline = _kink_signature(graph)
    worst = 0.0
    skipped = 0

    def loss_at() -> tuple[float, bool]:
        graph.recompute()
        crossed = any(np.any(a != b) for a, b in zip(_kink_signature(graph), baseline))
        return float(loss.data), crossed

    for name, param in graph.parameters.items():
        flat = param.data.reshape(-1)
        count = flat.size
        if max_entries is None or count <= max_entries:
            picks = np.arange(count)
        else:
            picks = rng.choice(count, size=max_entries, replace=False)
        for idx in picks:
            original = flat[idx]
            flat[idx] = original + step
            plus, crossed_p = loss_at()
            flat[idx] = original - step
            minus, crossed_m = loss_at()
            flat[idx] = original
            if crossed_p or crossed_m:
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * step)
            a = float(analytic[name].reshape(-1)[idx])
            worst = max(worst, abs(a - numeric) / max(floor, abs(numeric)))
    graph.recompute()
    if skipped:
        logger.debug("gradient_check: skipped %d entries at non-differentiable points", skipped)
    return worst


class Adam:
    """ 적응적 모멘트 추정 최적화기. 파라미터는 이름 → numpy 배열 딕셔너리입니다. """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        b1t = 1 - self.beta1 ** self.t
        b2t = 1 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in params:
                continue
            m = self.m.setdefault(name, np.zeros_like(params[name]))
            v = self.v.setdefault(name, np.zeros_like(params[name]))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[name] -= (self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)).astype(params[name].dtype)
