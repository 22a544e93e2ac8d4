"""Encoder-decoder network with skip connections (classic U-Net layout).

Per level the encoder applies two 3x3 same-padded convs with ReLU and halves
the resolution with 2x2 max pooling; the bottleneck is another double conv;
the decoder mirrors the encoder with stride-2 transposed convs, concatenates
the matching skip, and finishes with a 1x1 conv squashed through a sigmoid so
outputs live in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ulw.autodiff import (
    Tensor,
    concat_channels,
    conv2d,
    conv_transpose2d,
    max_pool2d,
    relu,
    sigmoid,
)
from ulw.errors import ConfigError, ShapeError
from ulw.params import ParamStore


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 16
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        for field in ("depth", "base_channels", "in_channels", "out_channels"):
            value = getattr(self, field)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"UNetConfig.{field} must be a positive int, got {value!r}")

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2 ** self.depth

    @property
    def divisor(self) -> int:
        """Input H and W must be divisible by this (one halving per level)."""
        return 2 ** self.depth


def _uniform_weight(rng: np.random.Generator, shape: tuple, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _add_conv(store: ParamStore, rng, name: str, c_in: int, c_out: int, k: int, dtype) -> None:
    store.add(name + ".w", Tensor(_uniform_weight(rng, (c_out, c_in, k, k), c_in * k * k, dtype),
                                  requires_grad=True))
    store.add(name + ".b", Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True))


def init_unet_params(config: UNetConfig, rng: np.random.Generator, store: ParamStore,
                     prefix: str = "unet.", dtype=np.float32) -> ParamStore:
    """Register all U-Net parameters on `store`.

    Weights draw from a fan-in-scaled uniform (bound 1/sqrt(c_in * k * k)) in a
    fixed architecture order, so a given generator state yields bitwise
    reproducible parameters; biases start at zero.
    """
    base = config.base_channels
    c_prev = config.in_channels
    for i in range(config.depth):
        c = base * 2 ** i
        _add_conv(store, rng, f"{prefix}enc{i}.conv1", c_prev, c, 3, dtype)
        _add_conv(store, rng, f"{prefix}enc{i}.conv2", c, c, 3, dtype)
        c_prev = c
    c_bott = base * 2 ** config.depth
    _add_conv(store, rng, f"{prefix}bottleneck.conv1", c_prev, c_bott, 3, dtype)
    _add_conv(store, rng, f"{prefix}bottleneck.conv2", c_bott, c_bott, 3, dtype)
    for i in reversed(range(config.depth)):
        c = base * 2 ** i
        c_above = base * 2 ** (i + 1)
        store.add(f"{prefix}dec{i}.up.w",
                  Tensor(_uniform_weight(rng, (c_above, c, 2, 2), c_above * 4, dtype),
                         requires_grad=True))
        _add_conv(store, rng, f"{prefix}dec{i}.conv1", 2 * c, c, 3, dtype)
        _add_conv(store, rng, f"{prefix}dec{i}.conv2", c, c, 3, dtype)
    _add_conv(store, rng, f"{prefix}head", base, config.out_channels, 1, dtype)
    return store


def _double_conv(x: Tensor, store: ParamStore, name: str) -> Tensor:
    x = relu(conv2d(x, store[name + ".conv1.w"], store[name + ".conv1.b"], padding="same"))
    return relu(conv2d(x, store[name + ".conv2.w"], store[name + ".conv2.b"], padding="same"))


def unet_forward(x: Tensor, config: UNetConfig, store: ParamStore,
                 prefix: str = "unet.") -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"unet_forward: input must be [N,C,H,W], got shape {x.shape}")
    _, c, h, w = x.shape
    if c != config.in_channels:
        raise ShapeError(f"unet_forward: input has {c} channels, config expects {config.in_channels}")
    div = config.divisor
    if h % div != 0 or w % div != 0:
        raise ShapeError(
            f"unet_forward: spatial dims {h}x{w} must be divisible by {div} (depth {config.depth})")
    skips = []
    for i in range(config.depth):
        x = _double_conv(x, store, f"{prefix}enc{i}")
        skips.append(x)
        x = max_pool2d(x)
    x = _double_conv(x, store, f"{prefix}bottleneck")
    for i in reversed(range(config.depth)):
        x = conv_transpose2d(x, store[f"{prefix}dec{i}.up.w"], stride=2)
        x = concat_channels(skips[i], x)
        x = _double_conv(x, store, f"{prefix}dec{i}")
    return sigmoid(conv2d(x, store[f"{prefix}head.w"], store[f"{prefix}head.b"], padding="same"))
