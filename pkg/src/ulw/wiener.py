"""Learnable Wiener-style gain applied ahead of the U-Net.

Each channel is smoothed by its own learnable kernel (initialized to a
normalized Gaussian), local signal power is estimated as the square of the
smoothed value, and the pixel is rescaled by p / (p + sigma_n^2 + eps).
The noise floor sigma_n^2 is parameterized as softplus(theta) so it stays
positive no matter where the optimizer pushes theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ulw.autodiff import Tensor, broadcast_to_channels, conv2d, softplus, square
from ulw.errors import ConfigError, NumericError, ShapeError

WIENER_KERNEL_SIZE = 5
WIENER_KERNEL_SIGMA = 1.0
INITIAL_NOISE_VARIANCE = 0.01
DEFAULT_EPSILON = 1e-6


def gaussian_kernel(size: int, sigma: float, dtype=np.float32) -> np.ndarray:
    """A [size, size] Gaussian normalized to sum exactly to 1."""
    if size < 1 or size % 2 != 1:
        raise ConfigError(f"gaussian_kernel: size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ConfigError(f"gaussian_kernel: sigma must be positive, got {sigma}")
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    gx, gy = np.meshgrid(coords, coords)
    kernel = np.exp(-(gx * gx + gy * gy) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    return kernel.astype(dtype)


def softplus_inverse(value: float) -> float:
    """theta such that softplus(theta) == value, stable for large values."""
    if value <= 0:
        raise ConfigError(f"softplus_inverse: value must be positive, got {value}")
    if value > 20.0:
        return value + math.log1p(-math.exp(-value))
    return math.log(math.expm1(value))


@dataclass
class WienerParams:
    """Learnable state of the Wiener stage.

    kernels: [C, 1, k, k] depthwise smoothing kernels.
    theta:   [C] unconstrained; noise variance is softplus(theta).
    """

    kernels: Tensor
    theta: Tensor
    epsilon: float = DEFAULT_EPSILON

    @classmethod
    def initial(cls, channels: int, kernel_size: int = WIENER_KERNEL_SIZE,
                sigma: float = WIENER_KERNEL_SIGMA,
                noise_variance: float = INITIAL_NOISE_VARIANCE,
                epsilon: float = DEFAULT_EPSILON, dtype=np.float32) -> "WienerParams":
        base = gaussian_kernel(kernel_size, sigma, dtype=dtype)
        kernels = np.broadcast_to(base, (channels, 1, kernel_size, kernel_size)).copy()
        theta = np.full(channels, softplus_inverse(noise_variance), dtype=dtype)
        return cls(kernels=Tensor(kernels, requires_grad=True),
                   theta=Tensor(theta, requires_grad=True),
                   epsilon=float(epsilon))

    @property
    def channels(self) -> int:
        return self.theta.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[-1]

    def noise_variance(self) -> np.ndarray:
        """Current per-channel sigma_n^2 as a plain array (for inspection)."""
        theta = self.theta.data.astype(np.float64)
        return np.maximum(theta, 0) + np.log1p(np.exp(-np.abs(theta)))

    def set_noise_variance(self, value: float) -> None:
        """Overwrite theta so every channel's sigma_n^2 equals `value`."""
        self.theta.data[...] = softplus_inverse(float(value))

    def astype(self, dtype) -> "WienerParams":
        return WienerParams(self.kernels.astype(dtype), self.theta.astype(dtype), self.epsilon)


def wiener_forward(x: Tensor, params: WienerParams) -> Tensor:
    """Apply the Wiener gain channelwise: s * p / (p + sigma_n^2 + eps), p = s^2.

    s is the depthwise smoothing of x with same-size output and edge-replicated
    padding.  Because p >= 0 and sigma_n^2 + eps > 0 the gain lies in [0, 1),
    so |output| <= |s| everywhere.  Differentiable w.r.t. x, kernels and theta.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"wiener_forward: input must be [N,C,H,W], got shape {x.shape}")
    if x.shape[1] != params.channels:
        raise ShapeError(
            f"wiener_forward: input has {x.shape[1]} channels, params expect {params.channels}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("wiener_forward: non-finite input")
    smoothed = conv2d(x, params.kernels, stride=1, padding="same", pad_mode="edge",
                      groups=params.channels)
    power = square(smoothed)
    noise = broadcast_to_channels(softplus(params.theta), power.shape)
    gain = power / (power + noise + params.epsilon)
    return smoothed * gain
