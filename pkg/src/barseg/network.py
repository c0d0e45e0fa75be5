"""The 10-layer dilated/separable segmentation network.

Layers 1-3 downscale the input by 4 with depthwise-separable convolutions,
layers 4-9 grow the receptive field with dilations 1..16, and layer 10 is a
1x1 head emitting one detection logit plus one logit per barcode class.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .tensor import ConvParams, Tensor, activation, activation_grad, conv2d, conv2d_grad

SCALE = 4
STRIDES = (2, 1, 2, 1, 1, 1, 1, 1, 1, 1)
DILATIONS = (1, 1, 1, 1, 2, 4, 8, 16, 1, 1)
SEPARABLE = (True, True, True, False, False, False, False, False, False, False)

MAGIC = b"BSEG"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    channels: int = 24
    n_classes: int = 0
    input_channels: int = 1

    def __post_init__(self) -> None:
        if self.channels < 1 or self.input_channels < 1 or self.n_classes < 0:
            raise ValueError(f"invalid network config {self}")


@dataclass(frozen=True)
class LayerSpec:
    index: int
    stride: int
    dilation: int
    separable: bool
    kernel: int
    in_channels: int
    out_channels: int
    activation: str  # "relu" or "head"


@dataclass
class SegmentationMap:
    """Network output at 1/4 resolution.

    ``detect_prob`` is ``(B, 1, h, w)``; ``class_prob`` is ``(B, N, h, w)`` or
    None when the model has no class channels.
    """

    detect_prob: np.ndarray
    class_prob: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return 0 if self.class_prob is None else self.class_prob.shape[1]


def build_network(config: NetworkConfig) -> list[LayerSpec]:
    layers = []
    in_ch = config.input_channels
    for i in range(10):
        last = i == 9
        out_ch = 1 + config.n_classes if last else config.channels
        layers.append(
            LayerSpec(
                index=i + 1,
                stride=STRIDES[i],
                dilation=DILATIONS[i],
                separable=SEPARABLE[i],
                kernel=1 if last else 3,
                in_channels=in_ch,
                out_channels=out_ch,
                activation="head" if last else "relu",
            )
        )
        in_ch = out_ch
    return layers


def count_parameters(config: NetworkConfig) -> int:
    """Weights plus biases; depthwise stages carry no bias."""
    total = 0
    for layer in build_network(config):
        k2 = layer.kernel * layer.kernel
        if layer.separable:
            total += layer.in_channels * k2
            total += layer.in_channels * layer.out_channels + layer.out_channels
        else:
            total += layer.in_channels * layer.out_channels * k2 + layer.out_channels
    return total


def receptive_fields(layers: list[LayerSpec]) -> list[int]:
    rf, jump, out = 1, 1, []
    for layer in layers:
        rf += (layer.kernel - 1) * layer.dilation * jump
        jump *= layer.stride
        out.append(rf)
    return out


@dataclass
class _Stage:
    layer: int
    conv: ConvParams
    relu: bool


class SegmentationNet:
    """Parameters and forward/backward for the fixed layer sequence."""

    def __init__(self, config: NetworkConfig | None = None, seed: int | None = 0, dtype=np.float32):
        self.config = config or NetworkConfig()
        self.layers = build_network(self.config)
        rng = np.random.default_rng(seed)
        self.stages: list[_Stage] = []
        for spec in self.layers:
            k = spec.kernel
            if spec.separable:
                dw = _he_uniform(rng, (spec.in_channels, 1, k, k), dtype)
                self.stages.append(
                    _Stage(spec.index, ConvParams(dw, None, spec.stride, spec.dilation, spec.in_channels), False)
                )
                pw = _he_uniform(rng, (spec.out_channels, spec.in_channels, 1, 1), dtype)
                bias = Tensor(np.zeros(spec.out_channels, dtype))
                self.stages.append(_Stage(spec.index, ConvParams(pw, bias), spec.activation == "relu"))
            else:
                w = _he_uniform(rng, (spec.out_channels, spec.in_channels, k, k), dtype)
                bias = Tensor(np.zeros(spec.out_channels, dtype))
                self.stages.append(
                    _Stage(spec.index, ConvParams(w, bias, spec.stride, spec.dilation), spec.activation == "relu")
                )

    @property
    def dtype(self):
        return self.stages[0].conv.weights.dtype

    def parameters(self) -> list[Tensor]:
        params = []
        for st in self.stages:
            params.append(st.conv.weights)
            if st.conv.bias is not None:
                params.append(st.conv.bias)
        return params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for st in self.stages:
            separable = self.layers[st.layer - 1].separable
            kind = "depthwise" if st.conv.bias is None else ("pointwise" if separable else "conv")
            prefix = f"layer{st.layer}.{kind}"
            named.append((prefix + ".weight", st.conv.weights))
            if st.conv.bias is not None:
                named.append((prefix + ".bias", st.conv.bias))
        return named

    def astype(self, dtype) -> SegmentationNet:
        clone = SegmentationNet(self.config, seed=None, dtype=dtype)
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst.data = src.data.astype(dtype)
        return clone

    def copy(self) -> SegmentationNet:
        return self.astype(self.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward_logits(self, images: Tensor, keep_cache: bool = False):
        x = _as_input(images, self.dtype)
        _check_dims(x.shape, self.config.input_channels)
        cache = [] if keep_cache else None
        for st in self.stages:
            inp = x
            x = conv2d(inp, st.conv)
            if st.relu:
                x = activation(x, "relu")
            if keep_cache:
                cache.append((inp, x))
        return x, cache

    def forward(self, images) -> SegmentationMap:
        logits, _ = self.forward_logits(images)
        return head(logits)

    def backward(self, cache, grad_logits: np.ndarray) -> np.ndarray:
        """Backpropagate a logit gradient; sets ``.grad`` on every parameter."""
        g = Tensor(np.asarray(grad_logits, dtype=self.dtype))
        for st, (inp, out) in zip(reversed(self.stages), reversed(cache)):
            if st.relu:
                # relu'(pre) == relu'(post) except at exactly 0, where both give 0
                g = activation_grad(out, "relu", g)
            gx, gw, gb = conv2d_grad(inp, st.conv, g)
            st.conv.weights.grad = gw
            if st.conv.bias is not None:
                st.conv.bias.grad = gb
            g = gx
        return g.data


def head(logits: Tensor) -> SegmentationMap:
    n = logits.shape[1] - 1
    det = activation(logits, "sigmoid", (0, 1)).data[:, :1]
    cls = activation(logits, "channel_softmax", (1, n + 1)).data[:, 1:] if n > 0 else None
    return SegmentationMap(det, cls)


def _he_uniform(rng, shape, dtype) -> Tensor:
    fan_in = shape[1] * shape[2] * shape[3]
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))


def _as_input(images, dtype) -> Tensor:
    if isinstance(images, Tensor):
        return images if images.dtype == dtype else images.astype(dtype)
    arr = np.asarray(images)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return Tensor(arr.astype(dtype))


def _check_dims(shape, channels) -> None:
    if len(shape) != 4 or shape[1] != channels:
        raise ValueError(f"expected input (B, {channels}, H, W), got {shape}")
    if shape[2] % SCALE or shape[3] % SCALE or shape[2] == 0 or shape[3] == 0:
        raise ValueError(f"input height/width must be positive multiples of {SCALE}, got {shape[2:]}")


def preprocess(images) -> np.ndarray:
    """uint8 grayscale ``(H, W)`` or ``(B, H, W)`` -> float32 ``(B, 1, H, W)`` in [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 2:
        arr = arr[None]
    return (arr.astype(np.float32) / 255.0)[:, None]


def pad_to_multiple(image: np.ndarray, multiple: int = SCALE, fill: int = 0) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = -h % multiple, -w % multiple
    if not ph and not pw:
        return image
    return np.pad(image, ((0, ph), (0, pw)), constant_values=fill)


# -- weight files ------------------------------------------------------------

class WeightFileError(ValueError):
    pass


def write_weights(model: SegmentationNet, fh: BinaryIO) -> None:
    cfg = model.config
    params = model.parameters()
    fh.write(MAGIC)
    fh.write(struct.pack("<H", FORMAT_VERSION))
    fh.write(struct.pack("<III", cfg.channels, cfg.input_channels, cfg.n_classes))
    fh.write(struct.pack("<I", len(params)))
    for p in params:
        fh.write(struct.pack("<I", p.data.ndim))
        fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise WeightFileError(f"weight file truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def read_weights(fh: BinaryIO, expected: NetworkConfig | None = None) -> SegmentationNet:
    magic = _read_exact(fh, 4)
    if magic != MAGIC:
        raise WeightFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<H", _read_exact(fh, 2))
    if version != FORMAT_VERSION:
        raise WeightFileError(f"unsupported weight format version {version} (expected {FORMAT_VERSION})")
    c, cin, n = struct.unpack("<III", _read_exact(fh, 12))
    cfg = NetworkConfig(channels=c, n_classes=n, input_channels=cin)
    if expected is not None and expected != cfg:
        raise WeightFileError(f"config mismatch: expected {expected}, file has {cfg}")
    model = SegmentationNet(cfg, seed=None)
    params = model.parameters()
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    if count != len(params):
        raise WeightFileError(f"expected {len(params)} parameter tensors, file has {count}")
    loaded = []
    for i, p in enumerate(params):
        (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        if tuple(shape) != p.shape:
            raise WeightFileError(f"tensor {i}: expected shape {p.shape}, file has {tuple(shape)}")
        size = int(np.prod(shape)) * 4
        loaded.append(np.frombuffer(_read_exact(fh, size), dtype="<f4").reshape(shape).astype(np.float32))
    for p, arr in zip(params, loaded):
        p.data = arr
    return model


def save_weights(model: SegmentationNet, path) -> None:
    with open(path, "wb") as fh:
        write_weights(model, fh)


def load_weights(path, expected: NetworkConfig | None = None) -> SegmentationNet:
    with open(Path(path), "rb") as fh:
        return read_weights(fh, expected)
