"""Convolutional predictor for the coefficient grids, plus checkpoint I/O.

The network maps a 3-channel stack [guide, distorted, mask] through
stride-2 downscaling convolutions (doubling channels), a stride-1 trunk,
and a bias-free linear head whose 2 * depth output channels split into the
slope grid A and the bias grid B. All convolutions are 3x3 with zero
padding 1, so a bin_size of 2**k needs exactly k downscaling layers and
the grids come out at (input dims / bin_size).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bilateral import apply_affine, blend, slice_grid
from .imaging import (
    FormatError,
    check_finite,
    check_mask,
    check_same_shape,
    crop,
    pad_replicate,
    raw_f32_bytes,
    raw_f32_from_bytes,
)

CKPT_MAGIC = b"DGCKPT1\n"


class NumericError(RuntimeError):
    """Non-finite value encountered during evaluation or optimization."""


@dataclass
class ConvLayer:
    """One 3x3 convolution: weight (out, in, 3, 3), optional per-channel bias."""

    weight: np.ndarray
    bias: np.ndarray | None
    stride: int = 1
    relu: bool = True


@dataclass(frozen=True)
class NetConfig:
    bin_size: int = 16
    luma_bins: int = 32
    downscale_channels: tuple[int, ...] = (32, 64, 128, 256)
    trunk_depth: int = 8

    def __post_init__(self):
        object.__setattr__(self, "downscale_channels", tuple(int(c) for c in self.downscale_channels))
        if self.luma_bins < 1:
            raise ValueError("luma_bins must be >= 1")
        if self.trunk_depth < 0:
            raise ValueError("trunk_depth must be >= 0")
        if any(c < 1 for c in self.downscale_channels):
            raise ValueError("downscale channel counts must be positive")
        if self.bin_size != 2 ** len(self.downscale_channels):
            raise ValueError(
                f"bin_size {self.bin_size} needs exactly log2(bin_size) downscaling layers, "
                f"got {len(self.downscale_channels)}"
            )

    @property
    def trunk_channels(self) -> int:
        return 8 * self.luma_bins

    @property
    def head_channels(self) -> int:
        return 2 * self.luma_bins

    @classmethod
    def scaled(cls, luma_bins: int, bin_size: int = 16, trunk_depth: int = 8) -> "NetConfig":
        """Derive the doubling downscale chain that ends at the trunk width.

        Reproduces the default (32, 64, 128, 256) chain for luma_bins=32,
        bin_size=16, and scales it for smaller test-size networks.
        """
        n = int(math.log2(bin_size))
        if 2**n != bin_size:
            raise ValueError(f"bin_size must be a power of two, got {bin_size}")
        top = 8 * luma_bins
        if top % 2 ** (n - 1) != 0:
            raise ValueError(f"cannot halve {top} channels {n - 1} times")
        chans = tuple(top // 2 ** (n - 1 - i) for i in range(n))
        return cls(bin_size=bin_size, luma_bins=luma_bins, downscale_channels=chans, trunk_depth=trunk_depth)


def _layer_plan(config: NetConfig) -> list[tuple[int, int, int, bool, bool]]:
    """(in_ch, out_ch, stride, relu, has_bias) for every layer, head last."""
    plan = []
    in_c = 3
    for out_c in config.downscale_channels:
        plan.append((in_c, out_c, 2, True, True))
        in_c = out_c
    for _ in range(config.trunk_depth):
        plan.append((in_c, config.trunk_channels, 1, True, True))
        in_c = config.trunk_channels
    plan.append((in_c, config.head_channels, 1, False, False))
    return plan


def init_params(config: NetConfig, seed: int, dtype=np.float32) -> list[ConvLayer]:
    """He-style initialization: N(0, 2 / (in * 9)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for in_c, out_c, stride, relu, has_bias in _layer_plan(config):
        std = math.sqrt(2.0 / (in_c * 9))
        weight = rng.normal(0.0, std, size=(out_c, in_c, 3, 3)).astype(dtype)
        bias = np.zeros(out_c, dtype) if has_bias else None
        layers.append(ConvLayer(weight, bias, stride, relu))
    return layers


def params_bin_size(params: list[ConvLayer]) -> int:
    b = 1
    for layer in params:
        b *= layer.stride
    return b


def params_luma_bins(params: list[ConvLayer]) -> int:
    return params[-1].weight.shape[0] // 2


def _im2col(padded: np.ndarray, stride: int, out_h: int, out_w: int) -> np.ndarray:
    c = padded.shape[0]
    cols = np.empty((c, 9, out_h, out_w), padded.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, k] = padded[
                :, dy : dy + stride * (out_h - 1) + 1 : stride, dx : dx + stride * (out_w - 1) + 1 : stride
            ]
            k += 1
    return cols.reshape(c * 9, out_h * out_w)


def _col2im(dcols: np.ndarray, x_shape: tuple, stride: int, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = x_shape
    dpad = np.zeros((c, h + 2, w + 2), dcols.dtype)
    d4 = dcols.reshape(c, 9, out_h, out_w)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dpad[:, dy : dy + stride * (out_h - 1) + 1 : stride, dx : dx + stride * (out_w - 1) + 1 : stride] += d4[
                :, k
            ]
            k += 1
    return dpad[:, 1 : h + 1, 1 : w + 1]


def conv2d(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """3x3 cross-correlation with zero padding 1.

    Output dims are ceil(input / stride); on the even dims the in-pipeline
    padding guarantees, stride 2 halves each spatial dim exactly.
    """
    y, _ = _conv2d_cached(x, layer)
    return y


def _conv2d_cached(x: np.ndarray, layer: ConvLayer):
    out_c, in_c = layer.weight.shape[:2]
    if x.ndim != 3 or x.shape[0] != in_c:
        raise ValueError(f"expected ({in_c}, H, W) input, got {x.shape}")
    _, h, w = x.shape
    s = layer.stride
    if s not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {s}")
    out_h = (h - 1) // s + 1
    out_w = (w - 1) // s + 1
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = _im2col(padded, s, out_h, out_w)
    y = layer.weight.reshape(out_c, in_c * 9) @ cols
    if layer.bias is not None:
        y += layer.bias[:, None]
    y = y.reshape(out_c, out_h, out_w)
    if layer.relu:
        np.maximum(y, 0.0, out=y)
    return y, (cols, x.shape, y, out_h, out_w)


def _conv2d_backward(layer: ConvLayer, cache, grad_y: np.ndarray):
    """Gradients w.r.t. input, weight and bias for one cached layer."""
    cols, x_shape, y, out_h, out_w = cache
    out_c, in_c = layer.weight.shape[:2]
    if layer.relu:
        grad_y = grad_y * (y > 0)
    g = grad_y.reshape(out_c, -1)
    grad_w = (g @ cols.T).reshape(layer.weight.shape)
    grad_b = g.sum(axis=1) if layer.bias is not None else None
    dcols = layer.weight.reshape(out_c, in_c * 9).T @ g
    grad_x = _col2im(dcols, x_shape, layer.stride, out_h, out_w)
    return grad_x, grad_w, grad_b


def _forward_stack(params, guide, distorted, mask, keep_caches: bool):
    check_same_shape(guide, distorted, mask)
    check_mask(mask)
    b = params_bin_size(params)
    h, w = guide.shape
    if h % b or w % b:
        raise ValueError(f"input dims {h}x{w} not divisible by bin size {b}; pad first")
    dtype = params[0].weight.dtype
    x = np.stack([guide, distorted, mask]).astype(dtype, copy=False)
    caches = []
    for i, layer in enumerate(params):
        x, cache = _conv2d_cached(x, layer)
        if keep_caches:
            if not np.isfinite(x).all():
                raise NumericError(f"non-finite activation after layer {i}")
            caches.append(cache)
    return x, caches


def forward_grids(params: list[ConvLayer], guide, distorted, mask):
    """Run the network; split its output channels into the A and B grids.

    The first luma_bins channels are the slope grid A, the rest the bias
    grid B (the checkpoint format relies on this order).
    """
    y, _ = _forward_stack(params, guide, distorted, mask, keep_caches=False)
    d = params_luma_bins(params)
    return np.ascontiguousarray(y[:d]), np.ascontiguousarray(y[d:])


def reconstruct(params: list[ConvLayer], guide, distorted, mask):
    """Full pipeline on arbitrary same-size inputs: pad, predict, slice, blend.

    Returns (result, net_out): the blended channel (clamped to [0, 1],
    untouched wherever mask == 0) and the raw regression output.
    """
    check_same_shape(guide, distorted, mask)
    for name, a in (("guide", guide), ("distorted", distorted), ("mask", mask)):
        check_finite(a, name)
    b = params_bin_size(params)
    guide_p, info = pad_replicate(guide, b)
    distorted_p, _ = pad_replicate(distorted, b)
    mask_p, _ = pad_replicate(mask, b)
    grid_a, grid_b = forward_grids(params, guide_p, distorted_p, mask_p)
    hi_a = slice_grid(grid_a, guide_p)
    hi_b = slice_grid(grid_b, guide_p)
    net_out = crop(apply_affine(hi_a, hi_b, guide_p), info)
    return blend(distorted, mask, net_out), net_out


@dataclass
class Checkpoint:
    params: list[ConvLayer]
    config: NetConfig
    meta: dict[str, str] = field(default_factory=dict)
    extras: dict[str, np.ndarray] = field(default_factory=dict)


def _param_blobs(params) -> list[tuple[str, np.ndarray]]:
    blobs = []
    for i, layer in enumerate(params):
        out_c, in_c = layer.weight.shape[:2]
        blobs.append((f"layer{i:02d}.weight", layer.weight.reshape(out_c, in_c, 9)))
        if layer.bias is not None:
            blobs.append((f"layer{i:02d}.bias", layer.bias.reshape(1, 1, out_c)))
    return blobs


def save_checkpoint(path, params, config: NetConfig, meta=None, extras=None) -> None:
    """DGCKPT1 container: text key/value header, blob index, raw SGF1 blobs."""
    blobs = _param_blobs(params)
    for name, arr in (extras or {}).items():
        blobs.append((name, arr))
    names = [n for n, _ in blobs]
    if len(set(names)) != len(names):
        raise ValueError("duplicate blob names in checkpoint")
    payloads = [raw_f32_bytes(arr) for _, arr in blobs]

    lines = [
        f"bin_size = {config.bin_size}",
        f"luma_bins = {config.luma_bins}",
        f"downscale_channels = {','.join(str(c) for c in config.downscale_channels)}",
        f"trunk_depth = {config.trunk_depth}",
    ]
    for k, v in (meta or {}).items():
        lines.append(f"meta.{k} = {v}")
    lines.append(f"blobs = {len(blobs)}")
    for (name, _), payload in zip(blobs, payloads):
        lines.append(f"{name} {len(payload)}")
    header = CKPT_MAGIC + ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        for payload in payloads:
            f.write(payload)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        buf = f.read()
    if not buf.startswith(CKPT_MAGIC):
        raise FormatError(f"{path}: bad checkpoint magic")
    pos = len(CKPT_MAGIC)

    def next_line():
        nonlocal pos
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: truncated checkpoint header")
        line = buf[pos:end].decode("ascii")
        pos = end + 1
        return line

    kv: dict[str, str] = {}
    meta: dict[str, str] = {}
    while True:
        line = next_line()
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise FormatError(f"{path}: malformed header line {line!r}")
        if key == "blobs":
            n_blobs = int(value)
            break
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            kv[key] = value

    index = []
    for _ in range(n_blobs):
        line = next_line()
        name, _, size = line.rpartition(" ")
        if not name:
            raise FormatError(f"{path}: malformed blob index line {line!r}")
        index.append((name, int(size)))

    blobs: dict[str, np.ndarray] = {}
    for name, size in index:
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated blob {name!r}")
        blobs[name] = raw_f32_from_bytes(buf[pos : pos + size])
        pos += size
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes after blobs")

    try:
        config = NetConfig(
            bin_size=int(kv["bin_size"]),
            luma_bins=int(kv["luma_bins"]),
            downscale_channels=tuple(int(c) for c in kv["downscale_channels"].split(",")),
            trunk_depth=int(kv["trunk_depth"]),
        )
    except KeyError as e:
        raise FormatError(f"{path}: missing config key {e}") from None

    params = []
    for i, (in_c, out_c, stride, relu, has_bias) in enumerate(_layer_plan(config)):
        try:
            weight = blobs.pop(f"layer{i:02d}.weight")
        except KeyError:
            raise FormatError(f"{path}: missing weight blob for layer {i}") from None
        if weight.size != out_c * in_c * 9:
            raise FormatError(f"{path}: layer {i} weight blob has {weight.size} values, expected {out_c * in_c * 9}")
        bias = None
        if has_bias:
            try:
                bias = blobs.pop(f"layer{i:02d}.bias")
            except KeyError:
                raise FormatError(f"{path}: missing bias blob for layer {i}") from None
            if bias.size != out_c:
                raise FormatError(f"{path}: layer {i} bias blob has {bias.size} values, expected {out_c}")
            bias = bias.reshape(out_c)
        params.append(ConvLayer(weight.reshape(out_c, in_c, 3, 3), bias, stride, relu))

    return Checkpoint(params=params, config=config, meta=meta, extras=blobs)
