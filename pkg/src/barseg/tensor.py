"""Dense NCHW tensors and the handful of ops the segmentation network needs.

Convolutions dispatch to :mod:`barseg.backend` for the gather/scatter and
depthwise inner loops; channel mixing goes through BLAS matmul.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import backend

ActivationKind = Literal["relu", "sigmoid", "channel_softmax"]


@dataclass
class Tensor:
    """A dense array with an optional gradient buffer of the same shape.

    Activations are 4-D ``(batch, channels, height, width)``; parameters reuse
    the class with their natural rank.
    """

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ValueError(f"grad shape {self.grad.shape} != data shape {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> Tensor:
        return Tensor(self.data.astype(dtype))

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> Tensor:
        return cls(np.zeros(shape, dtype=dtype))


@dataclass
class ConvParams:
    weights: Tensor  # (out_ch, in_ch // groups, kh, kw)
    bias: Tensor | None = None
    stride: int = 1
    dilation: int = 1
    groups: int = 1

    def __post_init__(self) -> None:
        if self.weights.data.ndim != 4:
            raise ValueError(f"weights must be 4-D, got shape {self.weights.shape}")
        if min(self.stride, self.dilation, self.groups) < 1:
            raise ValueError("stride, dilation and groups must be positive")
        if self.out_channels % self.groups:
            raise ValueError(f"out_ch {self.out_channels} not divisible by groups {self.groups}")
        if self.bias is not None and self.bias.shape != (self.out_channels,):
            raise ValueError(f"bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[2], self.weights.shape[3]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def padding(self) -> int:
        # zero padding that keeps stride-1 odd kernels size-preserving
        return self.dilation * (self.kernel[0] - 1) // 2

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        p, d, s = self.padding, self.dilation, self.stride
        return (h + 2 * p - d * (kh - 1) - 1) // s + 1, (w + 2 * p - d * (kw - 1) - 1) // s + 1


def _check_input(x: np.ndarray, params: ConvParams) -> None:
    if x.ndim != 4 or x.shape[1] != params.in_channels:
        raise ValueError(
            f"input shape {x.shape} incompatible with weights {params.weights.shape} "
            f"(groups={params.groups}, expects {params.in_channels} input channels)"
        )
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"input spatial dims must be >= 1, got {x.shape}")
    if x.dtype != params.weights.dtype:
        raise ValueError(f"dtype mismatch: input {x.dtype} vs weights {params.weights.dtype}")


def conv2d(input: Tensor, params: ConvParams) -> Tensor:
    x = input.data
    _check_input(x, params)
    B, Cin, H, W = x.shape
    kh, kw = params.kernel
    Ho, Wo = params.output_hw(H, W)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"input shape {x.shape} too small for kernel {params.weights.shape}")
    s, d, p, g = params.stride, params.dilation, params.padding, params.groups
    K = backend.kernels
    wd = params.weights.data
    if params.is_depthwise:
        out = K.depthwise_forward(x, np.ascontiguousarray(wd[:, 0]), s, d, p)
    else:
        cout_g, cin_g = params.out_channels // g, Cin // g
        out = np.empty((params.out_channels, B, Ho, Wo), dtype=x.dtype)
        for gi in range(g):
            xs = x if g == 1 else np.ascontiguousarray(x[:, gi * cin_g:(gi + 1) * cin_g])
            cols = K.im2col(xs, kh, kw, s, d, p)
            wmat = wd[gi * cout_g:(gi + 1) * cout_g].reshape(cout_g, -1)
            out[gi * cout_g:(gi + 1) * cout_g] = (wmat @ cols).reshape(cout_g, B, Ho, Wo)
        out = out.transpose(1, 0, 2, 3)
    if params.bias is not None:
        out = out + params.bias.data[None, :, None, None]
    return Tensor(np.ascontiguousarray(out))


def conv2d_grad(
    input: Tensor, params: ConvParams, upstream: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray | None]:
    """Adjoint of :func:`conv2d`: gradients for the input, weights and bias."""
    x = input.data
    _check_input(x, params)
    B, Cin, H, W = x.shape
    Ho, Wo = params.output_hw(H, W)
    gout = np.ascontiguousarray(upstream.data, dtype=x.dtype)
    if gout.shape != (B, params.out_channels, Ho, Wo):
        raise ValueError(
            f"upstream shape {gout.shape} != conv output shape {(B, params.out_channels, Ho, Wo)}"
        )
    kh, kw = params.kernel
    s, d, p, g = params.stride, params.dilation, params.padding, params.groups
    K = backend.kernels
    wd = params.weights.data
    gbias = gout.sum(axis=(0, 2, 3)) if params.bias is not None else None
    if params.is_depthwise:
        gx, gw = K.depthwise_backward(x, np.ascontiguousarray(wd[:, 0]), gout, s, d, p)
        return Tensor(gx), gw[:, None], gbias

    cout_g, cin_g = params.out_channels // g, Cin // g
    gmat_all = gout.transpose(1, 0, 2, 3).reshape(params.out_channels, -1)
    gx = np.empty_like(x) if g > 1 else None
    gw = np.empty_like(wd)
    for gi in range(g):
        xs = x if g == 1 else np.ascontiguousarray(x[:, gi * cin_g:(gi + 1) * cin_g])
        cols = K.im2col(xs, kh, kw, s, d, p)
        gmat = gmat_all[gi * cout_g:(gi + 1) * cout_g]
        wmat = wd[gi * cout_g:(gi + 1) * cout_g].reshape(cout_g, -1)
        gw[gi * cout_g:(gi + 1) * cout_g] = (gmat @ cols.T).reshape(cout_g, cin_g, kh, kw)
        gcols = np.ascontiguousarray(wmat.T @ gmat)
        gxs = K.col2im(gcols, B, cin_g, H, W, kh, kw, s, d, p)
        if g == 1:
            gx = gxs
        else:
            gx[:, gi * cin_g:(gi + 1) * cin_g] = gxs
    return Tensor(gx), gw, gbias


def _resolve_range(n_channels: int, channel_range) -> tuple[int, int]:
    if channel_range is None:
        return 0, n_channels
    lo, hi = channel_range
    if not 0 <= lo <= hi <= n_channels:
        raise ValueError(f"channel_range {channel_range} out of bounds for {n_channels} channels")
    return lo, hi


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z: np.ndarray, axis: int = 1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def activation(input: Tensor, kind: ActivationKind, channel_range=None) -> Tensor:
    """Apply ``kind`` to channels ``[lo, hi)``; other channels pass through."""
    x = input.data
    lo, hi = _resolve_range(x.shape[1], channel_range)
    if kind == "channel_softmax" and hi == lo:
        raise ValueError("channel_softmax needs a non-empty channel_range")
    out = x.copy()
    seg = x[:, lo:hi]
    if kind == "relu":
        out[:, lo:hi] = np.maximum(seg, 0)
    elif kind == "sigmoid":
        out[:, lo:hi] = _sigmoid(seg)
    elif kind == "channel_softmax":
        out[:, lo:hi] = _softmax(seg, axis=1)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return Tensor(out)


def activation_grad(input: Tensor, kind: ActivationKind, upstream: Tensor, channel_range=None) -> Tensor:
    x, g = input.data, upstream.data
    if g.shape != x.shape:
        raise ValueError(f"upstream shape {g.shape} != input shape {x.shape}")
    lo, hi = _resolve_range(x.shape[1], channel_range)
    if kind == "channel_softmax" and hi == lo:
        raise ValueError("channel_softmax needs a non-empty channel_range")
    out = g.astype(x.dtype, copy=True)
    seg, gseg = x[:, lo:hi], g[:, lo:hi]
    if kind == "relu":
        out[:, lo:hi] *= seg > 0
    elif kind == "sigmoid":
        s = _sigmoid(seg)
        out[:, lo:hi] = gseg * s * (1 - s)
    elif kind == "channel_softmax":
        s = _softmax(seg, axis=1)
        out[:, lo:hi] = s * (gseg - (gseg * s).sum(axis=1, keepdims=True))
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return Tensor(out)
