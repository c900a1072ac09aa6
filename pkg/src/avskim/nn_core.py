"""Deterministic float32 neural primitives.

Every op here is a plain function of ``(input, weights, state)``. Arrays are
channel-first: 1-D signals are ``[C, T]``, images ``[C, H, W]`` and video
``[C, T, H, W]``. Causal ops accept an explicit ``history`` so that a long
sequence can be evaluated in chunks with the same result as a single call.

LSTM gate order is fixed to (input, forget, cell, output) along the first
axis of the stacked ``[4*H, ...]`` weight matrices, with one bias per gate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

F32 = np.float32


class ShapeError(ValueError):
    """Raised when an input or weight tensor has the wrong shape."""


# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv1DSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    groups: int = 1
    causal_pad: bool = False
    activation: str = "none"
    bias: bool = True

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel", "stride", "groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError("channels must be divisible by groups")
        if self.stride > self.kernel:
            raise ValueError("stride must not exceed kernel")
        if self.activation not in ("none", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def left_pad(self) -> int:
        return self.kernel - self.stride if self.causal_pad else 0

    def weight_shapes(self) -> dict:
        shapes = {"weight": (self.out_channels, self.in_channels // self.groups, self.kernel)}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes


@dataclass(frozen=True)
class LinearSpec:
    in_features: int
    out_features: int
    bias: bool = True

    def weight_shapes(self) -> dict:
        shapes = {"weight": (self.out_features, self.in_features)}
        if self.bias:
            shapes["bias"] = (self.out_features,)
        return shapes


@dataclass(frozen=True)
class Conv2DSpec:
    """Per-frame 2-D convolution with symmetric ``kernel // 2`` zero padding."""

    in_channels: int
    out_channels: int
    kernel: int
    in_hw: tuple
    stride: int = 1
    groups: int = 1
    activation: str = "none"
    bias: bool = True

    def __post_init__(self):
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ValueError("channels must be divisible by groups")

    @property
    def out_hw(self) -> tuple:
        return tuple(_out_len(n, self.kernel, self.stride, 2 * (self.kernel // 2)) for n in self.in_hw)

    def weight_shapes(self) -> dict:
        cin = self.in_channels // self.groups
        shapes = {"weight": (self.out_channels, cin, self.kernel, self.kernel)}
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes


@dataclass(frozen=True)
class Conv3DSpec:
    """Temporally causal 3-D convolution (left-only temporal padding)."""

    in_channels: int
    out_channels: int
    temporal_kernel: int
    kernel: int
    in_hw: tuple
    stride: int = 1
    activation: str = "none"
    bias: bool = True

    @property
    def out_hw(self) -> tuple:
        return tuple(_out_len(n, self.kernel, self.stride, 2 * (self.kernel // 2)) for n in self.in_hw)

    def weight_shapes(self) -> dict:
        shapes = {
            "weight": (self.out_channels, self.in_channels, self.temporal_kernel, self.kernel, self.kernel)
        }
        if self.bias:
            shapes["bias"] = (self.out_channels,)
        return shapes


@dataclass(frozen=True)
class LstmSpec:
    input_size: int
    hidden_size: int
    bias: bool = True

    def weight_shapes(self) -> dict:
        h = self.hidden_size
        shapes = {"weight_ih": (4 * h, self.input_size), "weight_hh": (4 * h, h)}
        if self.bias:
            shapes["bias"] = (4 * h,)
        return shapes


LayerSpec = Union[Conv1DSpec, LinearSpec, Conv2DSpec, Conv3DSpec, LstmSpec]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(np.zeros(hidden_size, F32), np.zeros(hidden_size, F32))

    def copy(self) -> "LstmState":
        return LstmState(self.h.copy(), self.c.copy())


def _out_len(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + pad - kernel) // stride + 1


def _check(arr: np.ndarray, shape: tuple, name: str) -> None:
    if tuple(arr.shape) != tuple(shape):
        raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")


def _activate(y: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        np.maximum(y, 0, out=y)
    return y


# ---------------------------------------------------------------------------
# 1-D convolution and linear layers
# ---------------------------------------------------------------------------


def conv1d(
    x: np.ndarray,
    spec: Conv1DSpec,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    history: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Strided 1-D convolution of ``x[Cin, T]`` to ``[Cout, T']``.

    With ``causal_pad`` the input is prefixed by ``kernel - stride`` samples:
    zeros by default, or ``history`` (the tail of the previous chunk) when
    evaluating a stream in pieces.
    """
    x = np.asarray(x, F32)
    if x.ndim != 2 or x.shape[0] != spec.in_channels:
        raise ShapeError(f"conv1d input must be [{spec.in_channels}, T], got {x.shape}")
    _check(weight, spec.weight_shapes()["weight"], "conv1d weight")
    if spec.bias:
        if bias is None:
            raise ShapeError("conv1d spec declares a bias but none was given")
        _check(bias, (spec.out_channels,), "conv1d bias")
    pad = spec.left_pad
    if pad:
        if history is None:
            history = np.zeros((spec.in_channels, pad), F32)
        _check(history, (spec.in_channels, pad), "conv1d history")
        x = np.concatenate([history, x], axis=1)
    if x.shape[1] < spec.kernel:
        raise ShapeError(f"conv1d input has {x.shape[1]} samples, kernel needs {spec.kernel}")
    windows = sliding_window_view(x, spec.kernel, axis=1)[:, :: spec.stride, :]
    n_out = windows.shape[1]
    g = spec.groups
    cin_g, cout_g = spec.in_channels // g, spec.out_channels // g
    out = np.empty((spec.out_channels, n_out), F32)
    for gi in range(g):
        cols = windows[gi * cin_g : (gi + 1) * cin_g].transpose(0, 2, 1).reshape(cin_g * spec.kernel, n_out)
        w2 = weight[gi * cout_g : (gi + 1) * cout_g].reshape(cout_g, cin_g * spec.kernel)
        out[gi * cout_g : (gi + 1) * cout_g] = w2 @ cols
    if bias is not None:
        out += bias[:, None]
    return _activate(out, spec.activation)


class CausalConv1dStream:
    """Carries the causal pad buffer of a :func:`conv1d` across chunks."""

    def __init__(self, spec: Conv1DSpec, weight: np.ndarray, bias: Optional[np.ndarray] = None):
        if not spec.causal_pad:
            raise ValueError("streaming requires a causal conv spec")
        self.spec, self.weight, self.bias = spec, weight, bias
        self.reset()

    def reset(self) -> None:
        self._buf = np.zeros((self.spec.in_channels, self.spec.left_pad), F32)

    def push(self, x: np.ndarray) -> np.ndarray:
        spec = self.spec
        buf = np.concatenate([self._buf, np.asarray(x, F32)], axis=1)
        n_out = 0 if buf.shape[1] < spec.kernel else (buf.shape[1] - spec.kernel) // spec.stride + 1
        if n_out == 0:
            self._buf = buf
            return np.zeros((spec.out_channels, 0), F32)
        used = buf[:, : (n_out - 1) * spec.stride + spec.kernel]
        out = conv1d(used[:, spec.left_pad :], spec, self.weight, self.bias, history=used[:, : spec.left_pad])
        self._buf = buf[:, n_out * spec.stride :]
        return out


def linear(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply ``weight[out, in]`` to the last axis of ``x``."""
    x = np.asarray(x, F32)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} input features, got {x.shape[-1]}")
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return y


def frame_signal(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Split a 1-D signal into ``[T', kernel]`` strided frames (no padding)."""
    x = np.asarray(x, F32)
    if len(x) < kernel:
        raise ShapeError(f"signal of length {len(x)} shorter than frame length {kernel}")
    return sliding_window_view(x, kernel)[::stride].copy()


def overlap_add(frames: np.ndarray, stride: int) -> np.ndarray:
    """Sum strided frames ``[T', L]`` into a signal of length ``(T'-1)*stride + L``."""
    frames = np.asarray(frames, F32)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ShapeError("overlap_add needs a non-empty [T', L] frame matrix")
    n, length = frames.shape
    out = np.zeros((n - 1) * stride + length, F32)
    if length % stride == 0:
        for k in range(length // stride):
            out[k * stride : k * stride + n * stride] += frames[:, k * stride : (k + 1) * stride].reshape(-1)
    else:
        for t in range(n):
            out[t * stride : t * stride + length] += frames[t]
    return out


# ---------------------------------------------------------------------------
# 2-D / 3-D convolutions
# ---------------------------------------------------------------------------


def _pad_hw(x: np.ndarray, kernel: int) -> np.ndarray:
    p = kernel // 2
    if p == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    return np.pad(x, width)


def _im2col_hw(xp: np.ndarray, kernel: int, stride: int, out_hw: tuple) -> np.ndarray:
    """``xp[..., Hp, Wp]`` -> ``[prod(lead) * k * k, H' * W']`` patch matrix."""
    win = sliding_window_view(xp, (kernel, kernel), axis=(-2, -1))
    win = win[..., :: stride, :: stride, :, :][..., : out_hw[0], : out_hw[1], :, :]
    lead = xp.ndim - 2
    order = tuple(range(lead)) + (lead + 2, lead + 3, lead, lead + 1)
    return win.transpose(order).reshape(-1, out_hw[0] * out_hw[1])


def conv2d(x: np.ndarray, spec: Conv2DSpec, weight: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """2-D convolution of ``x[Cin, H, W]`` with symmetric zero padding."""
    x = np.asarray(x, F32)
    if x.shape != (spec.in_channels, *spec.in_hw):
        raise ShapeError(f"conv2d input must be {(spec.in_channels, *spec.in_hw)}, got {x.shape}")
    _check(weight, spec.weight_shapes()["weight"], "conv2d weight")
    k, s = spec.kernel, spec.stride
    oh, ow = spec.out_hw
    xp = _pad_hw(x, k)
    g = spec.groups
    if g == spec.in_channels and g == spec.out_channels:
        # depthwise: one filter per channel, accumulated tap by tap
        out = np.zeros((g, oh, ow), F32)
        for i in range(k):
            for j in range(k):
                tap = xp[:, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s]
                out += weight[:, 0, i, j][:, None, None] * tap
    else:
        cin_g, cout_g = spec.in_channels // g, spec.out_channels // g
        out = np.empty((spec.out_channels, oh, ow), F32)
        for gi in range(g):
            cols = _im2col_hw(xp[gi * cin_g : (gi + 1) * cin_g], k, s, (oh, ow))
            w2 = weight[gi * cout_g : (gi + 1) * cout_g].reshape(cout_g, -1)
            out[gi * cout_g : (gi + 1) * cout_g] = (w2 @ cols).reshape(cout_g, oh, ow)
    if bias is not None:
        out += bias[:, None, None]
    return _activate(out, spec.activation)


def depthwise_separable_conv2d(
    x: np.ndarray,
    dw_spec: Conv2DSpec,
    pw_spec: Conv2DSpec,
    dw_weight: np.ndarray,
    dw_bias: Optional[np.ndarray],
    pw_weight: np.ndarray,
    pw_bias: Optional[np.ndarray],
) -> np.ndarray:
    """Depthwise ``k x k`` convolution followed by a pointwise ``1 x 1`` mix."""
    if dw_spec.groups != dw_spec.in_channels or dw_spec.out_channels != dw_spec.in_channels:
        raise ShapeError("depthwise stage must use one filter per channel")
    if pw_spec.kernel != 1 or pw_spec.stride != 1:
        raise ShapeError("pointwise stage must be a 1x1 convolution")
    if pw_spec.in_channels != dw_spec.out_channels or tuple(pw_spec.in_hw) != tuple(dw_spec.out_hw):
        raise ShapeError("pointwise stage does not match the depthwise output")
    y = conv2d(x, dw_spec, dw_weight, dw_bias)
    return conv2d(y, pw_spec, pw_weight, pw_bias)


def conv3d_causal(
    x: np.ndarray,
    spec: Conv3DSpec,
    weight: np.ndarray,
    bias: Optional[np.ndarray] = None,
    history: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Causal 3-D convolution of ``x[Cin, T, H, W]`` to ``[Cout, T, H', W']``.

    The temporal axis is left-padded with ``temporal_kernel - 1`` frames
    (zeros, or ``history``); output frame ``t`` reads input frames ``<= t``.
    Frames are evaluated one at a time so any chunking gives identical bits.
    """
    x = np.asarray(x, F32)
    if x.ndim != 4 or x.shape[0] != spec.in_channels or tuple(x.shape[2:]) != tuple(spec.in_hw):
        raise ShapeError(f"conv3d input must be [{spec.in_channels}, T, {spec.in_hw[0]}, {spec.in_hw[1]}], got {x.shape}")
    _check(weight, spec.weight_shapes()["weight"], "conv3d weight")
    kt = spec.temporal_kernel
    if history is None:
        history = np.zeros((spec.in_channels, kt - 1, *spec.in_hw), F32)
    _check(history, (spec.in_channels, kt - 1, *spec.in_hw), "conv3d history")
    full = np.concatenate([history, x], axis=1)
    w2 = weight.reshape(spec.out_channels, -1)
    oh, ow = spec.out_hw
    out = np.empty((spec.out_channels, x.shape[1], oh, ow), F32)
    for t in range(x.shape[1]):
        window = _pad_hw(full[:, t : t + kt], spec.kernel)
        cols = _im2col_hw(window, spec.kernel, spec.stride, (oh, ow))
        frame = (w2 @ cols).reshape(spec.out_channels, oh, ow)
        if bias is not None:
            frame += bias[:, None, None]
        out[:, t] = _activate(frame, spec.activation)
    return out


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function via tanh (overflow-free; exactly 0.5 at 0)."""
    y = np.tanh(x * F32(0.5))
    y *= F32(0.5)
    y += F32(0.5)
    return y


def lstm_cell(gates_x: np.ndarray, h: np.ndarray, c: np.ndarray, weight_hh: np.ndarray):
    """One LSTM update from precomputed input gates ``W_ih x + b``.

    Shared by the step and sequence paths so both round identically.
    """
    hs = h.shape[0]
    g = gates_x + weight_hh @ h
    sig = sigmoid(g)
    c_new = sig[hs : 2 * hs] * c + sig[:hs] * np.tanh(g[2 * hs : 3 * hs])
    h_new = sig[3 * hs :] * np.tanh(c_new)
    return h_new, c_new


def lstm_step(x, state: LstmState, spec: LstmSpec, weight_ih, weight_hh, bias=None):
    x = np.asarray(x, F32)
    if x.shape != (spec.input_size,):
        raise ShapeError(f"lstm input must have {spec.input_size} features, got {x.shape}")
    if state.h.shape != (spec.hidden_size,) or state.c.shape != (spec.hidden_size,):
        raise ShapeError("lstm state does not match hidden size")
    if not (np.all(np.isfinite(state.h)) and np.all(np.isfinite(state.c))):
        raise ValueError("lstm state is not finite")
    gx = weight_ih @ x
    if bias is not None:
        gx += bias
    h, c = lstm_cell(gx, state.h, state.c, weight_hh)
    return h, LstmState(h, c)


def lstm_sequence(xs, state: LstmState, spec: LstmSpec, weight_ih, weight_hh, bias=None):
    """Run an LSTM over ``xs[T, input]``; returns ``(hs[T, hidden], state')``."""
    xs = np.asarray(xs, F32)
    if xs.ndim != 2 or xs.shape[1] != spec.input_size:
        raise ShapeError(f"lstm sequence must be [T, {spec.input_size}], got {xs.shape}")
    gx = xs @ weight_ih.T
    if bias is not None:
        gx += bias
    out = np.empty((xs.shape[0], spec.hidden_size), F32)
    h, c = state.h, state.c
    for t in range(xs.shape[0]):
        h, c = lstm_cell(gx[t], h, c, weight_hh)
        out[t] = h
    return out, LstmState(h, c)


# ---------------------------------------------------------------------------
# Cost formulas
# ---------------------------------------------------------------------------


def layer_cost(spec: LayerSpec) -> tuple:
    """Return ``(params, macs_per_output_frame)`` for one layer.

    One MAC is one weight multiply. For 1-D convs and linear layers an output
    frame is one time step across all output channels; for 2-D/3-D convs it
    is one whole video frame; for LSTMs it is one recurrent step.
    """
    params = sum(int(np.prod(s)) for s in spec.weight_shapes().values())
    if isinstance(spec, Conv1DSpec):
        macs = spec.out_channels * spec.kernel * spec.in_channels // spec.groups
    elif isinstance(spec, LinearSpec):
        macs = spec.out_features * spec.in_features
    elif isinstance(spec, Conv2DSpec):
        oh, ow = spec.out_hw
        macs = spec.out_channels * oh * ow * spec.kernel**2 * spec.in_channels // spec.groups
    elif isinstance(spec, Conv3DSpec):
        oh, ow = spec.out_hw
        macs = spec.out_channels * oh * ow * spec.temporal_kernel * spec.kernel**2 * spec.in_channels
    elif isinstance(spec, LstmSpec):
        macs = 4 * spec.hidden_size * (spec.input_size + spec.hidden_size)
    else:
        raise TypeError(f"unknown layer spec {type(spec).__name__}")
    return params, macs
