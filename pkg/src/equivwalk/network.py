"""Networks as chains of layer maps with exact Jacobians.

Every layer works on flat float64 vectors (images are flattened channel-major,
row-major). Forward evaluation is batched: inputs are ``(batch, dim)`` arrays,
which keeps grid scans cheap. Jacobians use rows = outputs, columns = inputs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ContractError, NumericError, OnKinkError, ShapeError, UnsupportedError
from .linalg import as_matrix, as_vector

KINK_TOL = 1e-15

SMOOTH_KINDS = ("identity", "sigmoid", "tanh", "softplus", "softmax")
PIECEWISE_KINDS = ("relu", "leaky_relu", "saturating_ramp")
RAMP_INNER_KINDS = ("identity", "sigmoid", "tanh", "softplus")


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _smooth_value(kind, z):
    if kind == "identity":
        return np.array(z, dtype=np.float64, copy=True)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    raise ContractError(f"unknown elementwise activation {kind!r}")


def _smooth_derivative(kind, z):
    if kind == "identity":
        return np.ones_like(z)
    if kind == "sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "softplus":
        return _sigmoid(z)
    raise ContractError(f"unknown elementwise activation {kind!r}")


_DERIVATIVE_BOUND = {"identity": 1.0, "sigmoid": 0.25, "tanh": 1.0, "softplus": 1.0,
                     "softmax": 0.5, "relu": 1.0}


@dataclass(frozen=True)
class Activation:
    """Activation function applied after an affine or linear map.

    ``leaky_relu`` is ``x`` for ``x >= 0`` and ``slope * x`` below.
    ``saturating_ramp`` is ``alpha`` below ``a``, ``inner(x)`` on ``[a, b]``
    and ``beta`` above ``b``.
    """

    kind: str = "identity"
    slope: float = 0.0
    alpha: float = 0.0
    beta: float = 1.0
    a: float = 0.0
    b: float = 1.0
    inner: str = "identity"

    def __post_init__(self):
        if self.kind not in SMOOTH_KINDS + PIECEWISE_KINDS:
            raise ContractError(f"unknown activation kind {self.kind!r}")
        if self.kind == "leaky_relu":
            if not np.isfinite(self.slope) or self.slope in (0.0, 1.0):
                raise ContractError(f"leaky_relu slope must be finite and not 0 or 1, got {self.slope}")
        if self.kind == "saturating_ramp":
            if self.inner not in RAMP_INNER_KINDS:
                raise ContractError(f"saturating_ramp inner must be one of {RAMP_INNER_KINDS}")
            if not self.a < self.b:
                raise ContractError("saturating_ramp needs a < b")
            ha, hb = _smooth_value(self.inner, np.array([self.a, self.b]))
            if not (self.alpha <= ha and hb <= self.beta):
                raise ContractError("saturating_ramp needs alpha <= inner(a) and inner(b) <= beta")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def leaky_relu(cls, slope):
        return cls("leaky_relu", slope=float(slope))

    @property
    def piecewise(self) -> bool:
        return self.kind in PIECEWISE_KINDS

    def value(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k == "relu":
            return np.where(z > 0, z, 0.0)
        if k == "leaky_relu":
            return np.where(z >= 0, z, self.slope * z)
        if k == "saturating_ramp":
            inner = _smooth_value(self.inner, z)
            return np.where(z < self.a, self.alpha, np.where(z > self.b, self.beta, inner))
        if k == "softmax":
            shifted = z - np.max(z, axis=-1, keepdims=True)
            e = np.exp(shifted)
            return e / np.sum(e, axis=-1, keepdims=True)
        return _smooth_value(k, z)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        """Elementwise derivative; on a kink the inactive/plateau side is used."""
        k = self.kind
        if k == "relu":
            return np.where(z > 0, 1.0, 0.0)
        if k == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        if k == "saturating_ramp":
            inside = (z > self.a) & (z < self.b)
            return np.where(inside, _smooth_derivative(self.inner, z), 0.0)
        if k == "softmax":
            raise ContractError("softmax has no elementwise derivative")
        return _smooth_derivative(k, z)

    def jacobian(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Jacobian of the activation at pre-activation ``z`` (output ``y``)."""
        if self.kind == "softmax":
            return np.diag(y) - np.outer(y, y)
        return np.diag(self.derivative(z))

    def kinks(self, z: np.ndarray) -> np.ndarray:
        k = self.kind
        if k in ("relu", "leaky_relu"):
            return np.abs(z) <= KINK_TOL
        if k == "saturating_ramp":
            return (np.abs(z - self.a) <= KINK_TOL) | (np.abs(z - self.b) <= KINK_TOL)
        return np.zeros(np.shape(z), dtype=bool)

    def regions(self, z: np.ndarray) -> np.ndarray:
        """Region codes: 1 active / 0 inactive, or 0/1/2 below/middle/above for ramps."""
        if self.kind in ("relu", "leaky_relu"):
            return (z > 0).astype(np.int8)
        if self.kind == "saturating_ramp":
            return np.where(z < self.a, 0, np.where(z > self.b, 2, 1)).astype(np.int8)
        return np.zeros(np.shape(z)[:-1] + (0,), dtype=np.int8)

    def derivative_bound(self) -> float:
        if self.kind == "leaky_relu":
            return max(1.0, abs(self.slope))
        if self.kind == "saturating_ramp":
            if self.inner == "softplus":
                return float(_sigmoid(np.array([self.b]))[0])
            return _DERIVATIVE_BOUND[self.inner]
        return _DERIVATIVE_BOUND[self.kind]


IDENTITY = Activation()


def operator_norm_bound(m: np.ndarray) -> float:
    """Upper bound on the spectral norm: min(Frobenius, sqrt(||m||_1 ||m||_inf))."""
    fro = float(np.linalg.norm(m))
    one = float(np.max(np.sum(np.abs(m), axis=0)))
    inf = float(np.max(np.sum(np.abs(m), axis=1)))
    return min(fro, float(np.sqrt(one * inf)))


# --------------------------------------------------------------------------
# layers


@dataclass
class LayerTrace:
    """Per-layer record of one forward pass (row 0 of a batch)."""

    input: np.ndarray
    pre: Optional[np.ndarray]
    output: np.ndarray
    kinks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    inner: list = field(default_factory=list)
    cell: Optional[dict] = None


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced in {where}")


class _LinearActLayer:
    """Shared logic for layers of the form ``act(M x + c)``."""

    def _linear(self) -> np.ndarray:
        raise NotImplementedError

    def _offset(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def in_dim(self) -> int:
        return self._linear().shape[1]

    @property
    def out_dim(self) -> int:
        return self._linear().shape[0]

    def apply(self, x):
        pre = x @ self._linear().T + self._offset()
        return pre, self.act.value(pre)

    def jacobian(self, tr: LayerTrace) -> np.ndarray:
        m = self._linear()
        if self.act.kind == "softmax":
            return self.act.jacobian(tr.pre, tr.output) @ m
        return self.act.derivative(tr.pre)[:, None] * m

    def pull_rows(self, tr: LayerTrace, G: np.ndarray) -> np.ndarray:
        """``G @ jacobian(tr)`` without materialising the layer Jacobian."""
        if self.act.kind == "softmax":
            return (G @ self.act.jacobian(tr.pre, tr.output)) @ self._linear()
        return (G * self.act.derivative(tr.pre)) @ self._linear()

    def lipschitz_bound(self) -> float:
        return operator_norm_bound(self._linear()) * self.act.derivative_bound()


@dataclass(frozen=True, eq=False)
class Dense(_LinearActLayer):
    A: np.ndarray
    b: np.ndarray
    act: Activation = IDENTITY

    def __post_init__(self):
        A = as_matrix(self.A, "Dense.A")
        b = as_vector(self.b, "Dense.b")
        if b.shape[0] != A.shape[0]:
            raise ShapeError(f"Dense bias has length {b.shape[0]}, expected {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def _linear(self):
        return self.A

    def _offset(self):
        return self.b


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


@dataclass(frozen=True, eq=False)
class Conv2D(_LinearActLayer):
    """2-D convolution (cross-correlation) over a channel-major flattened image.

    ``kernel`` is ``(out_channels, in_channels, k, k)``; a plain ``(k, k)``
    array means one channel in and out. ``padding`` is ``"none"`` or
    ``"zero"`` (``k // 2`` zeros on every border).
    """

    kernel: np.ndarray
    height: int
    width: int
    stride: int = 1
    padding: str = "none"
    bias: Optional[np.ndarray] = None
    act: Activation = IDENTITY

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim == 2:
            k = k[None, None]
        if k.ndim != 4 or k.shape[2] != k.shape[3]:
            raise ShapeError(f"Conv2D kernel must be square, got shape {k.shape}")
        if k.shape[2] % 2 != 1:
            raise ShapeError(f"Conv2D kernel side must be odd, got {k.shape[2]}")
        if not np.all(np.isfinite(k)):
            raise NumericError("Conv2D kernel has non-finite entries")
        if self.stride < 1:
            raise ContractError("Conv2D stride must be positive")
        if self.padding not in ("none", "zero"):
            raise ContractError(f"Conv2D padding must be 'none' or 'zero', got {self.padding!r}")
        bias = np.zeros(k.shape[0]) if self.bias is None else as_vector(self.bias, "Conv2D.bias")
        if bias.shape[0] != k.shape[0]:
            raise ShapeError("Conv2D bias length must equal out_channels")
        object.__setattr__(self, "kernel", k)
        object.__setattr__(self, "bias", bias)
        if self.out_height < 1 or self.out_width < 1:
            raise ShapeError("Conv2D kernel larger than the (padded) input")

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def in_channels(self):
        return self.kernel.shape[1]

    @property
    def ksize(self):
        return self.kernel.shape[2]

    @property
    def pad(self):
        return self.ksize // 2 if self.padding == "zero" else 0

    @property
    def out_height(self):
        return conv_output_size(self.height, self.ksize, self.stride, self.pad)

    @property
    def out_width(self):
        return conv_output_size(self.width, self.ksize, self.stride, self.pad)

    @cached_property
    def matrix(self) -> np.ndarray:
        """The convolution as an explicit ``out_dim x in_dim`` matrix."""
        O, C, k, _ = self.kernel.shape
        H, W, Ho, Wo = self.height, self.width, self.out_height, self.out_width
        o, i, j, c, di, dj = np.meshgrid(np.arange(O), np.arange(Ho), np.arange(Wo),
                                         np.arange(C), np.arange(k), np.arange(k), indexing="ij")
        r = i * self.stride - self.pad + di
        s = j * self.stride - self.pad + dj
        ok = (r >= 0) & (r < H) & (s >= 0) & (s < W)
        rows = (o * Ho * Wo + i * Wo + j)[ok]
        cols = (c * H * W + r * W + s)[ok]
        m = np.zeros((O * Ho * Wo, C * H * W))
        np.add.at(m, (rows, cols), self.kernel[o[ok], c[ok], di[ok], dj[ok]])
        return m

    def _linear(self):
        return self.matrix

    def _offset(self):
        return np.repeat(self.bias, self.out_height * self.out_width)

    def convolve_direct(self, image: np.ndarray) -> np.ndarray:
        """Sliding-window convolution of a ``(C, H, W)`` image, without the matrix."""
        img = np.asarray(image, dtype=np.float64).reshape(self.in_channels, self.height, self.width)
        p = self.pad
        padded = np.zeros((self.in_channels, self.height + 2 * p, self.width + 2 * p))
        padded[:, p:p + self.height, p:p + self.width] = img
        k = self.ksize
        out = np.zeros((self.out_channels, self.out_height, self.out_width))
        for o in range(self.out_channels):
            for i in range(self.out_height):
                for j in range(self.out_width):
                    r, s = i * self.stride, j * self.stride
                    window = padded[:, r:r + k, s:s + k]
                    out[o, i, j] = np.sum(window * self.kernel[o]) + self.bias[o]
        return out


@dataclass(frozen=True, eq=False)
class AvgPool(_LinearActLayer):
    """Non-overlapping ``window x window`` average pooling, optionally followed by an activation."""

    window: int
    channels: int
    height: int
    width: int
    act: Activation = IDENTITY

    def __post_init__(self):
        if self.window < 1:
            raise ContractError("AvgPool window must be positive")
        if self.height // self.window < 1 or self.width // self.window < 1:
            raise ShapeError("AvgPool window larger than the input")

    @property
    def out_height(self):
        return self.height // self.window

    @property
    def out_width(self):
        return self.width // self.window

    @cached_property
    def matrix(self) -> np.ndarray:
        w, C, H, W = self.window, self.channels, self.height, self.width
        Ho, Wo = self.out_height, self.out_width
        m = np.zeros((C * Ho * Wo, C * H * W))
        c, i, j, di, dj = np.meshgrid(np.arange(C), np.arange(Ho), np.arange(Wo),
                                      np.arange(w), np.arange(w), indexing="ij")
        rows = (c * Ho * Wo + i * Wo + j).ravel()
        cols = (c * H * W + (i * w + di) * W + (j * w + dj)).ravel()
        m[rows, cols] = 1.0 / (w * w)
        return m

    def _linear(self):
        return self.matrix

    def _offset(self):
        return 0.0


@dataclass(frozen=True, eq=False)
class Flatten:
    """Marks the switch from image to vector data; numerically the identity."""

    height: int
    width: int
    channels: int = 1

    @property
    def in_dim(self):
        return self.channels * self.height * self.width

    @property
    def out_dim(self):
        return self.in_dim

    def apply(self, x):
        return None, np.array(x, copy=True)

    def jacobian(self, tr):
        return np.eye(self.in_dim)

    def lipschitz_bound(self):
        return 1.0


@dataclass(frozen=True, eq=False)
class Residual:
    """Skip connection: ``x + inner(x)`` with ``inner`` a chain of layers."""

    inner: tuple

    def __post_init__(self):
        inner = tuple(self.inner)
        if not inner:
            raise ContractError("Residual block needs at least one inner layer")
        _check_chain(inner, "Residual")
        if inner[0].in_dim != inner[-1].out_dim:
            raise ShapeError(
                f"Residual inner maps {inner[0].in_dim} -> {inner[-1].out_dim}; dims must match")
        object.__setattr__(self, "inner", inner)

    @property
    def in_dim(self):
        return self.inner[0].in_dim

    @property
    def out_dim(self):
        return self.in_dim

    def lipschitz_bound(self):
        return 1.0 + float(np.prod([layer.lipschitz_bound() for layer in self.inner]))


@dataclass(frozen=True, eq=False)
class LSTMCell:
    """LSTM unit mapping ``x`` to the new hidden state ``h'``.

    Gate blocks are stacked in the order input, forget, candidate, output:
    ``W`` is ``4h x in``, ``U`` is ``4h x h`` and ``b`` has length ``4h``.
    The cell state ``(c, h)`` is carried by the network's recurrent state.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    hidden_dim: int

    def __post_init__(self):
        W, U, b = as_matrix(self.W, "LSTM.W"), as_matrix(self.U, "LSTM.U"), as_vector(self.b, "LSTM.b")
        h = self.hidden_dim
        if W.shape[0] != 4 * h or U.shape != (4 * h, h) or b.shape[0] != 4 * h:
            raise ShapeError(f"LSTM weights inconsistent with hidden_dim {h}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "b", b)

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.hidden_dim

    @property
    def state_dim(self):
        return 2 * self.hidden_dim

    def step(self, x, c, h):
        """One time step on batches; returns ``(c', h', gates)``."""
        n = self.hidden_dim
        z = x @ self.W.T + h @ self.U.T + self.b
        i = _sigmoid(z[..., :n])
        f = _sigmoid(z[..., n:2 * n])
        g = np.tanh(z[..., 2 * n:3 * n])
        o = _sigmoid(z[..., 3 * n:])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        return c_new, h_new, dict(i=i, f=f, g=g, o=o, c=c, h=h, c_new=c_new)

    def state_jacobians(self, tr: LayerTrace) -> dict:
        """Blocks ``d(c', h') / d(x, c, h)`` at the traced point."""
        n = self.hidden_dim
        gt = tr.cell
        i, f, g, o, c, c_new = gt["i"], gt["f"], gt["g"], gt["o"], gt["c"], gt["c_new"]
        di, df = i * (1 - i), f * (1 - f)
        dg, do = 1 - g * g, o * (1 - o)
        tc = np.tanh(c_new)

        def gate_blocks(M):
            return (di[:, None] * M[:n], df[:, None] * M[n:2 * n],
                    dg[:, None] * M[2 * n:3 * n], do[:, None] * M[3 * n:])

        out = {}
        for name, M in (("x", self.W), ("h", self.U)):
            Ji, Jf, Jg, Jo = gate_blocks(M)
            dc = c[:, None] * Jf + g[:, None] * Ji + i[:, None] * Jg
            out["c_" + name] = dc
            out["h_" + name] = (o * (1 - tc * tc))[:, None] * dc + tc[:, None] * Jo
        out["c_c"] = np.diag(f)
        out["h_c"] = np.diag(o * (1 - tc * tc) * f)
        return out

    def jacobian(self, tr: LayerTrace) -> np.ndarray:
        return self.state_jacobians(tr)["h_x"]

    def lipschitz_bound(self):
        raise UnsupportedError("no closed-form Lipschitz bound for LSTM cells")


Layer = Union[Dense, Conv2D, AvgPool, Flatten, Residual, LSTMCell]


def _check_chain(layers, where):
    for idx in range(1, len(layers)):
        if layers[idx - 1].out_dim != layers[idx].in_dim:
            raise ShapeError(
                f"{where}: layer {idx - 1} outputs {layers[idx - 1].out_dim} values "
                f"but layer {idx} expects {layers[idx].in_dim}")


def _iter_cells(layers):
    for layer in layers:
        if isinstance(layer, LSTMCell):
            yield layer
        elif isinstance(layer, Residual):
            yield from _iter_cells(layer.inner)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """An ordered chain of layers.

    ``memory_dim > 0`` makes the network a fully recurrent map on the pair
    ``(u, r)``: the first layer receives ``input_dim + memory_dim`` values and
    the last ``memory_dim`` outputs become the next memory. LSTM cells add
    their own ``(c, h)`` to the recurrent state.
    """

    layers: tuple
    input_dim: int
    output_dim: int
    memory_dim: int = 0

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if self.input_dim < 1 or self.output_dim < 1 or self.memory_dim < 0:
            raise ShapeError("network dimensions must be positive")
        if not layers:
            if self.memory_dim or self.input_dim != self.output_dim:
                raise ShapeError("an empty network must be the identity map")
            return
        _check_chain(layers, "network")
        if layers[0].in_dim != self.input_dim + self.memory_dim:
            raise ShapeError(
                f"first layer expects {layers[0].in_dim} inputs, network declares "
                f"{self.input_dim} + memory {self.memory_dim}")
        if layers[-1].out_dim != self.output_dim:
            raise ShapeError(
                f"last layer outputs {layers[-1].out_dim}, network declares {self.output_dim}")
        if self.memory_dim > self.output_dim:
            raise ShapeError("memory_dim cannot exceed output_dim")

    @classmethod
    def from_layers(cls, layers, memory_dim=0):
        layers = tuple(layers)
        return cls(layers, layers[0].in_dim - memory_dim, layers[-1].out_dim, memory_dim)

    @property
    def cells(self) -> tuple:
        return tuple(_iter_cells(self.layers))

    @property
    def recurrent(self) -> bool:
        return self.memory_dim > 0 or bool(self.cells)

    @property
    def state_dim(self) -> int:
        return self.memory_dim + sum(c.state_dim for c in self.cells)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Trace:
    layers: list
    state_in: np.ndarray
    state_out: np.ndarray


def _split_state(net: NetworkSpec, state: np.ndarray):
    """Per-cell ``(c, h)`` batch arrays from a batch of state vectors."""
    cells = []
    off = net.memory_dim
    for cell in net.cells:
        n = cell.hidden_dim
        cells.append((state[:, off:off + n], state[:, off + n:off + 2 * n]))
        off += 2 * n
    return cells


def _run(layers, x, cell_states, cursor, new_states, traces, path):
    for idx, layer in enumerate(layers):
        name = f"{path}{idx}"
        if isinstance(layer, Residual):
            inner_traces = [] if traces is not None else None
            y = _run(layer.inner, x, cell_states, cursor, new_states, inner_traces, name + ".")
            out = x + y
            pre = None
            kinks = np.zeros(0, dtype=bool)
        elif isinstance(layer, LSTMCell):
            c, h = cell_states[cursor[0]]
            c_new, out, gates = layer.step(x, c, h)
            new_states.append(np.concatenate([c_new, out], axis=1))
            cursor[0] += 1
            pre = None
            kinks = np.zeros(0, dtype=bool)
        else:
            pre, out = layer.apply(x)
            act = getattr(layer, "act", None)
            kinks = act.kinks(pre[0]) if act is not None else np.zeros(0, dtype=bool)
        _check_finite(out, f"layer {name} ({type(layer).__name__})")
        if traces is not None:
            tr = LayerTrace(input=x[0].copy(), pre=None if pre is None else pre[0].copy(),
                            output=out[0].copy(), kinks=kinks)
            if isinstance(layer, Residual):
                tr.inner = inner_traces
            if isinstance(layer, LSTMCell):
                tr.cell = {key: val[0].copy() for key, val in gates.items()}
            traces.append(tr)
        x = out
    return x


def _prepare(net: NetworkSpec, x, state):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"expected inputs of dimension {net.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("input has non-finite entries")
    batch = x.shape[0]
    if state is None:
        state = np.zeros((batch, net.state_dim))
    else:
        state = np.asarray(state, dtype=np.float64)
        if state.ndim == 1:
            state = np.broadcast_to(state, (batch, state.shape[0]))
        if state.shape != (batch, net.state_dim):
            raise ShapeError(f"recurrent state must have dimension {net.state_dim}")
    z0 = np.concatenate([x, state[:, :net.memory_dim]], axis=1) if net.memory_dim else x
    return z0, state


def forward_batch(net: NetworkSpec, x, state=None, return_state=False):
    """Evaluate the network on a ``(batch, input_dim)`` array."""
    z0, state = _prepare(net, x, state)
    new_states = []
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite values are reported per layer
        out = _run(net.layers, z0, _split_state(net, state), [0], new_states, None, "")
    if not return_state:
        return out
    parts = [out[:, out.shape[1] - net.memory_dim:]] if net.memory_dim else []
    parts += new_states
    nxt = np.concatenate(parts, axis=1) if parts else np.zeros((out.shape[0], 0))
    return out, nxt


def forward(net: NetworkSpec, x, state=None):
    """Single-point evaluation returning ``(output, trace)``.

    The trace holds every layer's input, pre-activation and output, enough to
    build all layer Jacobians without re-evaluating the network.
    """
    xv = np.asarray(x, dtype=np.float64)
    if xv.ndim != 1:
        raise ShapeError("forward expects a single input vector")
    z0, st = _prepare(net, xv[None, :], None if state is None else np.asarray(state)[None, :])
    traces, new_states = [], []
    with np.errstate(over="ignore", invalid="ignore"):
        out = _run(net.layers, z0, _split_state(net, st), [0], new_states, traces, "")
    parts = [out[:, out.shape[1] - net.memory_dim:]] if net.memory_dim else []
    parts += new_states
    nxt = np.concatenate(parts, axis=1)[0] if parts else np.zeros(0)
    return out[0], Trace(traces, st[0].copy(), nxt)


def _kink_check(layer, tr, name):
    if tr.kinks.size and np.any(tr.kinks):
        units = np.flatnonzero(tr.kinks)
        raise OnKinkError(f"pre-activation on a kink at layer {name}, units {units.tolist()}",
                          layer_index=name, units=units)


def layer_jacobian(layer, input=None, trace: Optional[LayerTrace] = None, strict=True, name="0",
                   state=None):
    """Exact Jacobian of one layer at ``input`` (or at the traced point).

    With ``strict`` a pre-activation exactly on a kink raises OnKinkError;
    otherwise the inactive/plateau-side derivative is used.
    """
    if trace is None:
        if input is None:
            raise ContractError("layer_jacobian needs an input or a trace")
        sub = NetworkSpec.from_layers([layer])
        if state is None and isinstance(layer, LSTMCell):
            state = np.zeros(layer.state_dim)
        _, tr = forward(sub, input, state)
        trace = tr.layers[0]
    if isinstance(layer, Residual):
        inner = _chain_jacobian(layer.inner, trace.inner, strict, name + ".")
        return inner + np.eye(layer.in_dim)
    if strict:
        _kink_check(layer, trace, name)
    return layer.jacobian(trace)


def _pull_rows(layer, tr, G, strict, name):
    if isinstance(layer, Residual):
        return _chain_rows(layer.inner, tr.inner, G, strict, name + ".") + G
    if strict:
        _kink_check(layer, tr, name)
    if isinstance(layer, Flatten):
        return G
    if hasattr(layer, "pull_rows"):
        return layer.pull_rows(tr, G)
    return G @ layer.jacobian(tr)


def _chain_rows(layers, traces, G, strict, path):
    # accumulate from the output side: cheap when outputs are few
    for idx in range(len(layers) - 1, -1, -1):
        G = _pull_rows(layers[idx], traces[idx], G, strict, f"{path}{idx}")
    return G


def _chain_jacobian(layers, traces, strict, path):
    return _chain_rows(layers, traces, np.eye(layers[-1].out_dim), strict, path)


def network_jacobian(net: NetworkSpec, x, state=None, strict=True, trace=None) -> np.ndarray:
    """``output_dim x input_dim`` Jacobian, the recurrent state held fixed."""
    if trace is None:
        _, trace = forward(net, x, state)
    if not net.layers:
        return np.eye(net.input_dim)
    J = _chain_jacobian(net.layers, trace.layers, strict, "")
    return J[:, :net.input_dim]


def full_state_jacobian(net: NetworkSpec, x, state=None) -> np.ndarray:
    """Jacobian of ``(u, r) -> (output, r_next)``, shape ``(out + s) x (in + s)``."""
    out, trace = forward(net, x, state)
    n_in, s = net.input_dim, net.state_dim
    cols = n_in + s
    D = np.zeros((n_in + net.memory_dim, cols))
    D[:, :n_in + net.memory_dim] = np.eye(n_in + net.memory_dim)
    cell_rows = []
    offsets = []
    off = n_in + net.memory_dim
    for cell in net.cells:
        offsets.append(off)
        off += cell.state_dim
    cursor = [0]

    def propagate(layers, traces, D):
        for layer, tr in zip(layers, traces):
            if isinstance(layer, Residual):
                D = propagate(layer.inner, tr.inner, D) + D
            elif isinstance(layer, LSTMCell):
                blocks = layer.state_jacobians(tr)
                base = offsets[cursor[0]]
                n = layer.hidden_dim
                Ec = np.zeros((n, cols))
                Ec[:, base:base + n] = np.eye(n)
                Eh = np.zeros((n, cols))
                Eh[:, base + n:base + 2 * n] = np.eye(n)
                Dc = blocks["c_x"] @ D + blocks["c_c"] @ Ec + blocks["c_h"] @ Eh
                Dh = blocks["h_x"] @ D + blocks["h_c"] @ Ec + blocks["h_h"] @ Eh
                cell_rows.append(np.vstack([Dc, Dh]))
                cursor[0] += 1
                D = Dh
            else:
                D = layer.jacobian(tr) @ D
        return D

    D_out = propagate(net.layers, trace.layers, D) if net.layers else D
    rows = [D_out]
    if net.memory_dim:
        rows.append(D_out[D_out.shape[0] - net.memory_dim:])
    rows += cell_rows
    return np.vstack(rows)


# --------------------------------------------------------------------------
# activation signatures


@dataclass(frozen=True, eq=False)
class ActivationSignature:
    """Region codes of every piecewise unit, in layer order.

    ``flagged`` marks that some pre-activation sat exactly on a kink (it is
    then recorded on the inactive side).
    """

    codes: np.ndarray
    flagged: bool = False

    def __eq__(self, other):
        if not isinstance(other, ActivationSignature):
            return NotImplemented
        return self.codes.shape == other.codes.shape and bool(np.all(self.codes == other.codes))

    def __hash__(self):
        return hash(self.codes.tobytes())

    def __len__(self):
        return int(self.codes.size)

    def digest(self) -> str:
        return hashlib.sha256(self.codes.astype(np.int8).tobytes()).hexdigest()[:16]


def _collect_codes(layers, traces, codes, flags):
    for layer, tr in zip(layers, traces):
        if isinstance(layer, Residual):
            _collect_codes(layer.inner, tr.inner, codes, flags)
            continue
        act = getattr(layer, "act", None)
        if act is not None and act.piecewise:
            codes.append(act.regions(tr.pre))
            flags.append(bool(np.any(tr.kinks)))


def signature_from_trace(net: NetworkSpec, trace: Trace) -> ActivationSignature:
    codes, flags = [], []
    _collect_codes(net.layers, trace.layers, codes, flags)
    arr = np.concatenate(codes).astype(np.int8) if codes else np.zeros(0, dtype=np.int8)
    return ActivationSignature(arr, any(flags))


def activation_signature(net: NetworkSpec, x, state=None) -> ActivationSignature:
    _, trace = forward(net, x, state)
    return signature_from_trace(net, trace)


def trace_has_kink(trace: Trace) -> bool:
    def walk(trs):
        for tr in trs:
            if tr.kinks.size and np.any(tr.kinks):
                return True
            if tr.inner and walk(tr.inner):
                return True
        return False
    return walk(trace.layers)


# --------------------------------------------------------------------------
# recurrent unrolling


@dataclass(frozen=True)
class RecurrentStep:
    u: np.ndarray
    r: np.ndarray
    output: np.ndarray
    r_next: np.ndarray


def unroll_recurrent(net: NetworkSpec, inputs: Sequence, steps: int) -> list:
    """Run ``steps`` time steps from ``r_0 = 0``.

    Step ``t`` records its input ``u``, the state ``r`` it was fed (zero at
    ``t = 0``), its output and the state ``r_next`` handed to step ``t + 1``.
    """
    if not net.recurrent:
        raise ContractError("unroll_recurrent needs a recurrent network")
    if steps < 0 or steps > len(inputs):
        raise ContractError(f"steps={steps} exceeds the {len(inputs)} available inputs")
    r = np.zeros(net.state_dim)
    history = []
    for t in range(steps):
        u = as_vector(inputs[t], f"inputs[{t}]")
        out, nxt = forward_batch(net, u[None, :], r[None, :], return_state=True)
        history.append(RecurrentStep(u.copy(), r.copy(), out[0], nxt[0].copy()))
        r = nxt[0]
    return history
