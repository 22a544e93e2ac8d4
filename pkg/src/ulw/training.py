"""Training loop, checkpoint wiring, and batch inference over directories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ulw.autodiff import Graph, Tensor, no_grad
from ulw.checkpoint import load_checkpoint, save_checkpoint
from ulw.data import ImagePair, load_image, load_pairs, resize_image, save_image
from ulw.errors import ConfigError, NumericError, ShapeError, UsageError
from ulw.losses import FeatureExtractor, LossWeights, composite_loss
from ulw.model import UlwModel, build_model, check_preset, model_from_store
from ulw.optim import DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, DEFAULT_LR, Adam
from ulw.unet import UNetConfig


def resolve_weights(preset: str, alpha: float | None = None, beta: float | None = None,
                    gamma: float | None = None) -> LossWeights:
    """Turn preset plus optional explicit weights into a validated LossWeights.

    Weights must be given all together or not at all.  The base preset pins
    (1, 0, 0); passing anything else alongside it is a configuration error
    rather than a silent override.
    """
    check_preset(preset)
    given = [w for w in (alpha, beta, gamma) if w is not None]
    if not given:
        return LossWeights.for_preset(preset)
    if len(given) != 3:
        raise ConfigError("loss weights must be given all together (alpha, beta, gamma)")
    weights = LossWeights(alpha, beta, gamma)
    if preset == "base" and weights.as_tuple() != (1.0, 0.0, 0.0):
        raise ConfigError(f"preset base requires weights (1, 0, 0), got {weights.as_tuple()}")
    return weights


@dataclass
class TrainConfig:
    """Everything a training run needs; validate() runs before any data is read."""

    preset: str = "ulw"
    depth: int = 4
    base_channels: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_EPS
    batch_size: int = 2
    max_steps: int = 300
    seed: int = 0
    image_size: int | None = 64
    data_dir: str | None = None
    checkpoint_path: str | None = None
    checkpoint_every: int = 100
    extractor_path: str | None = None
    dump_grid: str | None = None

    def validate(self) -> "TrainConfig":
        check_preset(self.preset)
        if self.preset == "base" and self.weights.as_tuple() != (1.0, 0.0, 0.0):
            raise ConfigError(
                f"preset base requires weights (1, 0, 0), got {self.weights.as_tuple()}")
        self.unet_config()  # raises ConfigError on bad depth/base_channels
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ConfigError(f"max steps must be >= 1, got {self.max_steps}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint interval must be >= 1, got {self.checkpoint_every}")
        if self.image_size is not None:
            divisor = 2 ** self.depth
            if self.image_size < divisor or self.image_size % divisor:
                raise ConfigError(
                    f"image size {self.image_size} must be a positive multiple of {divisor}")
        return self

    def unet_config(self) -> UNetConfig:
        return UNetConfig(depth=self.depth, base_channels=self.base_channels)

    def checkpoint_echo(self) -> dict:
        return {
            "preset": self.preset,
            "depth": self.depth,
            "base_channels": self.base_channels,
            "weights": list(self.weights.as_tuple()),
            "seed": self.seed,
        }


def _load_extractor(config: TrainConfig) -> FeatureExtractor:
    if config.extractor_path is None:
        return FeatureExtractor.default()
    return FeatureExtractor.load(config.extractor_path)


def _batch_indices(n: int, batch_size: int, steps: int, seed: int):
    """Deterministic epoch-style sampler: reshuffled permutations, cut to batches."""
    rng = np.random.Generator(np.random.PCG64(seed))
    queue: list[int] = []
    for _ in range(steps):
        while len(queue) < batch_size:
            queue.extend(int(i) for i in rng.permutation(n))
        yield queue[:batch_size]
        del queue[:batch_size]


def _format_row(**fields) -> str:
    parts = []
    for key, value in fields.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.6f}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


def fit_pairs(pairs: list[ImagePair], config: TrainConfig, log=None) -> tuple[UlwModel, list]:
    """Run the optimization loop over in-memory pairs.

    Returns (model, history) where history holds one dict per step with the
    raw loss breakdown.  The loss is evaluated before the update, so the first
    row reflects the freshly initialized model.
    """
    config.validate()
    if not pairs:
        raise UsageError("fit_pairs: no training pairs")
    if config.batch_size > len(pairs):
        raise ConfigError(
            f"batch size {config.batch_size} exceeds dataset size {len(pairs)}")
    divisor = 2 ** config.depth
    for pair in pairs:
        _, h, w = pair.smoky.shape
        if h % divisor or w % divisor:
            raise ShapeError(
                f"pair {pair.id}: {h}x{w} not divisible by 2^depth = {divisor}")

    model = build_model(config.unet_config(), config.preset, config.seed)
    extractor = _load_extractor(config)
    optimizer = Adam(model.store, config.lr, config.beta1, config.beta2, config.eps)
    if log:
        log(_format_row(preset=config.preset, depth=config.depth,
                        base_channels=config.base_channels, steps=config.max_steps,
                        batch=config.batch_size, lr=config.lr, seed=config.seed,
                        pairs=len(pairs)))

    history = []
    sampler = _batch_indices(len(pairs), config.batch_size, config.max_steps, config.seed)
    for step, indices in enumerate(sampler, start=1):
        x = Tensor(np.stack([pairs[i].smoky for i in indices]), requires_grad=False)
        y = Tensor(np.stack([pairs[i].clean for i in indices]), requires_grad=False)
        with Graph() as graph:
            pred = model.forward(x)
            total, breakdown = composite_loss(pred, y, config.weights, extractor)
            if not math.isfinite(breakdown["total"]):
                raise NumericError(
                    f"non-finite total loss {breakdown['total']!r} at step {step}")
            model.store.zero_grads()
            graph.backward(total)
        optimizer.step()
        history.append({"step": step, **breakdown})
        if log:
            log(_format_row(step=step, total=breakdown["total"], mse=breakdown["mse"],
                            ssim=breakdown["ssim"], perceptual=breakdown["perceptual"]))
        if config.checkpoint_path and step % config.checkpoint_every == 0:
            save_checkpoint(config.checkpoint_path, model.store, config.checkpoint_echo())

    if config.checkpoint_path:
        save_checkpoint(config.checkpoint_path, model.store, config.checkpoint_echo())
        if log:
            log(f"checkpoint={config.checkpoint_path}")
    if config.dump_grid:
        dump_grid(model, pairs, config.dump_grid)
        if log:
            log(f"grid={config.dump_grid}")
    return model, history


def train(config: TrainConfig, log=None) -> tuple[UlwModel, list]:
    """Validate the config, load the dataset, and fit."""
    config.validate()
    if config.data_dir is None:
        raise ConfigError("train: data_dir is required")
    pairs = load_pairs(config.data_dir, config.image_size)
    return fit_pairs(pairs, config, log=log)


def model_from_checkpoint(path) -> UlwModel:
    """Rebuild a model from a checkpoint's config echo and parameters."""
    store, config = load_checkpoint(path)
    try:
        unet_config = UNetConfig(depth=int(config["depth"]),
                                 base_channels=int(config["base_channels"]))
        preset = config["preset"]
    except KeyError as exc:
        raise ConfigError(f"{path}: checkpoint config is missing {exc}") from exc
    return model_from_store(unet_config, preset, store)


def _nearest_multiple(value: int, divisor: int) -> int:
    return max(divisor, ((value + divisor // 2) // divisor) * divisor)


def predict_image(model: UlwModel, image: np.ndarray, allow_resize: bool = False) -> np.ndarray:
    """Run one [3,H,W] image through the model, handling divisibility.

    With allow_resize, dimensions that are not multiples of 2^depth are
    bilinearly resampled to the nearest valid size and the output is mapped
    back, so the result always matches the input shape.
    """
    _, h, w = image.shape
    divisor = model.config.divisor
    rh, rw = h, w
    if h % divisor or w % divisor:
        if not allow_resize:
            raise ShapeError(
                f"input {h}x{w} not divisible by 2^depth = {divisor}; enable resizing")
        rh, rw = _nearest_multiple(h, divisor), _nearest_multiple(w, divisor)
    work = resize_image(image, rh, rw)
    with no_grad():
        pred = model.forward(Tensor(work[np.newaxis], requires_grad=False))
    out = np.clip(pred.data[0], 0.0, 1.0).astype(np.float32)
    if (rh, rw) != (h, w):
        out = resize_image(out, h, w)
    return out


def desmoke_dir(checkpoint_path, input_dir, output_dir, allow_resize: bool = False,
                log=None) -> int:
    """Restore every PNG under input_dir into output_dir, preserving names."""
    model = model_from_checkpoint(checkpoint_path)
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    files = sorted(input_dir.glob("*.png"))
    if not files:
        raise UsageError(f"desmoke: no .png files under {input_dir}")
    output_dir.mkdir(parents=True, exist_ok=True)
    for path in files:
        restored = predict_image(model, load_image(path), allow_resize)
        save_image(restored, output_dir / path.name)
        if log:
            log(f"wrote={output_dir / path.name}")
    return len(files)


def dump_grid(model: UlwModel, pairs: list[ImagePair], path, max_rows: int = 4) -> None:
    """Write a smoky | restored | clean comparison grid for the first few pairs."""
    rows = []
    for pair in pairs[:max_rows]:
        restored = predict_image(model, pair.smoky)
        rows.append(np.concatenate([pair.smoky, restored, pair.clean], axis=2))
    save_image(np.concatenate(rows, axis=1), path)
