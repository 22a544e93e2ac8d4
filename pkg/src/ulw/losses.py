"""Training objective: weighted MSE + SSIM + feature-space (perceptual) terms.

All three terms are plain means over their respective element grids, scalars
in the graph, and differentiable w.r.t. the prediction.  The composite applies
the configured weights; zero-weighted terms are still evaluated (detached) so
logs can report them, but they contribute nothing to the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ulw.autodiff import (
    Tensor,
    conv2d,
    no_grad,
    reduce_mean,
    relu,
    square,
    sub,
)
from ulw.checkpoint import load_checkpoint, save_checkpoint
from ulw.errors import ConfigError, ShapeError, UsageError
from ulw.params import ParamStore

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_PEAK = 1.0

_EXTRACTOR_SEED = 1234
_EXTRACTOR_CHANNELS = (3, 16, 32, 64, 64)
_EXTRACTOR_STRIDES = (1, 2, 1, 2)
_EXTRACTOR_TAP = 2


@dataclass(frozen=True)
class LossWeights:
    """Convex weights over (mse, ssim, perceptual); must sum to 1."""

    mse: float = 1.0 / 3.0
    ssim: float = 1.0 / 3.0
    perceptual: float = 1.0 / 3.0

    def __post_init__(self):
        for name in ("mse", "ssim", "perceptual"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {value!r}")
        total = self.mse + self.ssim + self.perceptual
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"loss weights must sum to 1, got {total!r}")

    @classmethod
    def for_preset(cls, preset: str) -> "LossWeights":
        if preset == "base":
            return cls(1.0, 0.0, 0.0)
        if preset == "ulw":
            return cls()
        raise ConfigError(f"unknown preset {preset!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.mse, self.ssim, self.perceptual)


def _check_pair(kind: str, pred: Tensor, target: Tensor) -> None:
    if not isinstance(pred, Tensor) or not isinstance(target, Tensor):
        raise UsageError(f"{kind}: both arguments must be Tensors")
    if pred.shape != target.shape:
        raise ShapeError(f"{kind}: shape mismatch {pred.shape} vs {target.shape}")


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over every element."""
    _check_pair("mse_loss", pred, target)
    return reduce_mean(square(sub(pred, target)))


_window_cache: dict[tuple, Tensor] = {}


def _ssim_window(channels: int, dtype) -> Tensor:
    key = (channels, np.dtype(dtype).str)
    window = _window_cache.get(key)
    if window is None:
        half = SSIM_WINDOW // 2
        coords = np.arange(-half, half + 1, dtype=np.float64)
        g = np.exp(-(coords * coords) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        k2d = np.outer(g, g)
        k2d /= k2d.sum()
        kernel = np.broadcast_to(k2d.astype(dtype), (channels, 1, SSIM_WINDOW, SSIM_WINDOW)).copy()
        window = Tensor(kernel, requires_grad=False)
        _window_cache[key] = window
    return window


def ssim_map(x: Tensor, y: Tensor) -> tuple[Tensor, Tensor]:
    """Local SSIM over an 11x11 Gaussian window (sigma 1.5), plus its mean.

    Inputs are [N,C,H,W] in [0, 1] with H, W >= 11; statistics are computed
    per channel with valid padding, the standard stabilizers C1 = (K1*L)^2 and
    C2 = (K2*L)^2 with L = 1.  Fully differentiable.
    """
    _check_pair("ssim_map", x, y)
    if x.data.ndim != 4:
        raise ShapeError(f"ssim_map: inputs must be [N,C,H,W], got shape {x.shape}")
    _, c, h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(
            f"ssim_map: spatial dims {h}x{w} must be at least the window size {SSIM_WINDOW}")
    window = _ssim_window(c, x.dtype)
    c1 = (SSIM_K1 * SSIM_PEAK) ** 2
    c2 = (SSIM_K2 * SSIM_PEAK) ** 2

    def blur(t: Tensor) -> Tensor:
        return conv2d(t, window, padding="valid", groups=c)

    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(square(x)) - square(mu_x)
    var_y = blur(square(y)) - square(mu_y)
    cov = blur(x * y) - mu_x * mu_y
    numerator = (2.0 * (mu_x * mu_y) + c1) * (2.0 * cov + c2)
    denominator = (square(mu_x) + square(mu_y) + c1) * (var_x + var_y + c2)
    smap = numerator / denominator
    return smap, reduce_mean(smap)


def ssim_loss(pred: Tensor, target: Tensor) -> Tensor:
    """1 - mean SSIM; ranges over [0, 2]."""
    _, mean = ssim_map(pred, target)
    return sub(1.0, mean)


class FeatureExtractor:
    """Frozen conv stack whose intermediate activation defines the feature space.

    stages is a list of (weight [C_out, C_in, 3, 3], bias [C_out], stride);
    each stage is a same-padded conv followed by ReLU.  tap is how many leading
    stages are applied before features are compared.  Weights never require
    gradients, so the comparison is differentiable w.r.t. the images only.
    """

    def __init__(self, stages: list, tap: int):
        if not stages:
            raise ConfigError("FeatureExtractor needs at least one stage")
        if not 1 <= tap <= len(stages):
            raise ConfigError(f"tap must be in 1..{len(stages)}, got {tap}")
        for weight, bias, stride in stages:
            if weight.requires_grad or bias.requires_grad:
                raise UsageError("FeatureExtractor stages must be frozen (requires_grad=False)")
            if stride not in (1, 2):
                raise ConfigError(f"extractor stride must be 1 or 2, got {stride}")
        self.stages = stages
        self.tap = tap

    @property
    def in_channels(self) -> int:
        return self.stages[0][0].shape[1]

    def features(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4:
            raise ShapeError(f"extractor: input must be [N,C,H,W], got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"extractor: input has {x.shape[1]} channels, expected {self.in_channels}")
        for weight, bias, stride in self.stages[:self.tap]:
            x = relu(conv2d(x, weight, bias, stride=stride, padding="same"))
        return x

    def astype(self, dtype) -> "FeatureExtractor":
        stages = [(w.astype(dtype), b.astype(dtype), s) for w, b, s in self.stages]
        return FeatureExtractor(stages, self.tap)

    @classmethod
    def default(cls, dtype=np.float32) -> "FeatureExtractor":
        """The built-in fixture: a 4-stage seeded stack tapped after stage 2.

        Weights are orthogonal rows (QR of a seeded normal draw, signs fixed
        from R's diagonal) scaled by sqrt(2) to keep activation magnitudes
        roughly stable through the ReLUs.
        """
        rng = np.random.Generator(np.random.PCG64(_EXTRACTOR_SEED))
        stages = []
        for c_in, c_out, stride in zip(_EXTRACTOR_CHANNELS[:-1], _EXTRACTOR_CHANNELS[1:],
                                       _EXTRACTOR_STRIDES):
            fan_in = c_in * 9
            a = rng.standard_normal((fan_in, c_out))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            # ascontiguousarray keeps the layout identical to what a
            # checkpoint reload produces, so features are bitwise stable
            # across a save/load round trip.
            weight = np.ascontiguousarray(
                (q.T * np.sqrt(2.0)).reshape(c_out, c_in, 3, 3).astype(dtype))
            bias = np.zeros(c_out, dtype=dtype)
            stages.append((Tensor(weight), Tensor(bias), stride))
        return cls(stages, tap=_EXTRACTOR_TAP)

    def save(self, path) -> None:
        store = ParamStore()
        for i, (weight, bias, _) in enumerate(self.stages):
            store.add(f"stage{i}.w", weight)
            store.add(f"stage{i}.b", bias)
        config = {
            "kind": "feature_extractor",
            "strides": [s for _, _, s in self.stages],
            "tap": self.tap,
        }
        save_checkpoint(path, store, config)

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        store, config = load_checkpoint(path)
        if config.get("kind") != "feature_extractor":
            raise ConfigError(f"{path}: not a feature extractor container")
        strides = config["strides"]
        stages = []
        for i, stride in enumerate(strides):
            weight = store[f"stage{i}.w"]
            bias = store[f"stage{i}.b"]
            weight.requires_grad = False
            bias.requires_grad = False
            stages.append((weight, bias, int(stride)))
        return cls(stages, tap=int(config["tap"]))


def perceptual_loss(pred: Tensor, target: Tensor, extractor: FeatureExtractor) -> Tensor:
    """Mean squared difference between tapped extractor activations."""
    _check_pair("perceptual_loss", pred, target)
    return reduce_mean(square(sub(extractor.features(pred), extractor.features(target))))


def composite_loss(pred: Tensor, target: Tensor, weights: LossWeights,
                   extractor: FeatureExtractor) -> tuple[Tensor, dict]:
    """Weighted total plus a per-term breakdown of raw (unweighted) values.

    Terms with weight zero are computed outside the graph: they show up in the
    breakdown but add nothing to the total, so one-hot weights reproduce the
    single term bitwise.
    """
    terms = (
        ("mse", weights.mse, lambda: mse_loss(pred, target)),
        ("ssim", weights.ssim, lambda: ssim_loss(pred, target)),
        ("perceptual", weights.perceptual, lambda: perceptual_loss(pred, target, extractor)),
    )
    total: Tensor | None = None
    breakdown: dict[str, float] = {}
    for name, weight, evaluate in terms:
        if weight != 0.0:
            term = evaluate()
            contribution = term * weight
            total = contribution if total is None else total + contribution
        else:
            with no_grad():
                term = evaluate()
        breakdown[name] = float(term.data)
    assert total is not None  # weights sum to 1, so at least one is nonzero
    breakdown["total"] = float(total.data)
    return total, breakdown
