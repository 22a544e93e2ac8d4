"""scikit-learn style wrappers around the training loop and the compositor.

UlwDesmoker is the fit/transform face of the pipeline: fit on matched
smoky/clean batches, transform smoky batches into restorations.  It follows
the estimator contract (constructor stores hyperparameters verbatim,
get_params/set_params work, fitted state carries a trailing underscore), so
it composes with sklearn model-selection utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ulw._validation import check_image_batch, check_matching_batches
from ulw.checkpoint import load_checkpoint, save_checkpoint
from ulw.data import ImagePair, SmokeRecipe, pair_seed, synth_smoke
from ulw.metrics import ssim
from ulw.training import TrainConfig, fit_pairs, model_from_checkpoint, predict_image, \
    resolve_weights


class UlwDesmoker(BaseEstimator, TransformerMixin):
    """Learnable Wiener prefilter plus U-Net, trained pixel-to-pixel.

    Parameters mirror the CLI: preset "ulw" enables the Wiener stage and the
    composite loss, "base" is the plain U-Net with MSE only.  alpha/beta/gamma
    override the preset's loss weights and must be given together.
    """

    def __init__(self, preset: str = "ulw", depth: int = 2, base_channels: int = 8,
                 alpha: float | None = None, beta: float | None = None,
                 gamma: float | None = None, lr: float = 1e-3, batch_size: int = 2,
                 max_steps: int = 300, seed: int = 0, extractor_path=None):
        self.preset = preset
        self.depth = depth
        self.base_channels = base_channels
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.lr = lr
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.seed = seed
        self.extractor_path = extractor_path

    def _config(self) -> TrainConfig:
        weights = resolve_weights(self.preset, self.alpha, self.beta, self.gamma)
        return TrainConfig(preset=self.preset, depth=self.depth,
                           base_channels=self.base_channels, weights=weights, lr=self.lr,
                           batch_size=self.batch_size, max_steps=self.max_steps,
                           seed=self.seed, image_size=None,
                           extractor_path=self.extractor_path).validate()

    def fit(self, X, y):
        """Train on smoky inputs X and clean targets y, both [N,3,H,W] in [0, 1]."""
        xv, yv = check_matching_batches(X, y, "X", "y")
        pairs = [ImagePair(f"{i:04d}", xv[i], yv[i]) for i in range(xv.shape[0])]
        self.model_, self.history_ = fit_pairs(pairs, self._config())
        return self

    def transform(self, X) -> np.ndarray:
        """Restore a smoky batch; output matches the input shape."""
        check_is_fitted(self, "model_")
        xv = check_image_batch(X, "X")
        return np.stack([predict_image(self.model_, img, allow_resize=True) for img in xv])

    def predict(self, X) -> np.ndarray:
        return self.transform(X)

    def score(self, X, y) -> float:
        """Mean SSIM between restorations and clean targets (higher is better)."""
        xv, yv = check_matching_batches(X, y, "X", "y")
        restored = self.transform(xv)
        return float(np.mean([ssim(restored[i], yv[i]) for i in range(xv.shape[0])]))

    def save_checkpoint(self, path) -> None:
        """Persist the fitted model in the standard checkpoint container."""
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_.store, self._config().checkpoint_echo())

    @classmethod
    def from_checkpoint(cls, path) -> "UlwDesmoker":
        """Rebuild a fitted desmoker from a checkpoint file."""
        model = model_from_checkpoint(path)
        _, config = load_checkpoint(path)
        kwargs = dict(preset=model.preset, depth=model.config.depth,
                      base_channels=model.config.base_channels)
        if "seed" in config:
            kwargs["seed"] = int(config["seed"])
        weights = config.get("weights")
        if isinstance(weights, list) and len(weights) == 3:
            kwargs.update(alpha=weights[0], beta=weights[1], gamma=weights[2])
        est = cls(**kwargs)
        est.model_ = model
        est.history_ = []
        return est


class SmokeSynthesizer(BaseEstimator, TransformerMixin):
    """Stateless transformer that composites synthetic smoke onto clean batches.

    Each batch element gets its own noise field, derived from (seed, index),
    so transforming the same batch twice is reproducible.
    """

    def __init__(self, density: float = 0.6, noise_octaves: int = 4,
                 noise_scale: float = 16.0, seed: int = 0):
        self.density = density
        self.noise_octaves = noise_octaves
        self.noise_scale = noise_scale
        self.seed = seed

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        xv = check_image_batch(X, "X")
        out = []
        for i, clean in enumerate(xv):
            recipe = SmokeRecipe(density=self.density, noise_octaves=self.noise_octaves,
                                 noise_scale=self.noise_scale,
                                 seed=pair_seed(self.seed, str(i)))
            out.append(synth_smoke(clean, recipe))
        return np.stack(out)
