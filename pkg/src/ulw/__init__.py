"""ulw: learnable Wiener prefilter + U-Net for supervised smoke removal.

The package is built on a small tape-based autodiff engine (ulw.autodiff) and
numpy; training, evaluation, and data synthesis are reachable both through
the `ulw` CLI and through the scikit-learn style estimators below.
"""

from ulw.autodiff import Graph, Tensor, grad_check, no_grad
from ulw.data import (
    ImagePair,
    SmokeRecipe,
    build_synthetic_dataset,
    gen_fractal_noise,
    load_image,
    load_pairs,
    save_image,
    split_dataset,
    synth_smoke,
)
from ulw.errors import (
    CheckpointError,
    ConfigError,
    ImageIOError,
    NumericError,
    ShapeError,
    UlwError,
    UsageError,
)
from ulw.estimator import SmokeSynthesizer, UlwDesmoker
from ulw.losses import FeatureExtractor, LossWeights, composite_loss, mse_loss, \
    perceptual_loss, ssim_loss
from ulw.metrics import ciede2000, evaluate_pairs, mse, psnr, srgb_to_lab, ssim
from ulw.model import UlwModel, build_model, ulw_forward
from ulw.optim import Adam
from ulw.params import ParamStore
from ulw.training import TrainConfig, desmoke_dir, fit_pairs, model_from_checkpoint, train
from ulw.unet import UNetConfig
from ulw.wiener import WienerParams, wiener_forward

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "CheckpointError",
    "ConfigError",
    "FeatureExtractor",
    "Graph",
    "ImageIOError",
    "ImagePair",
    "LossWeights",
    "NumericError",
    "ParamStore",
    "ShapeError",
    "SmokeRecipe",
    "SmokeSynthesizer",
    "Tensor",
    "TrainConfig",
    "UNetConfig",
    "UlwDesmoker",
    "UlwError",
    "UlwModel",
    "UsageError",
    "WienerParams",
    "__version__",
    "build_model",
    "build_synthetic_dataset",
    "ciede2000",
    "composite_loss",
    "desmoke_dir",
    "evaluate_pairs",
    "fit_pairs",
    "gen_fractal_noise",
    "grad_check",
    "load_image",
    "load_pairs",
    "model_from_checkpoint",
    "mse",
    "mse_loss",
    "no_grad",
    "perceptual_loss",
    "psnr",
    "save_image",
    "split_dataset",
    "srgb_to_lab",
    "ssim",
    "ssim_loss",
    "synth_smoke",
    "train",
    "ulw_forward",
]
