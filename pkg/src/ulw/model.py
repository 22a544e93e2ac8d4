"""The full desmoking model: an optional Wiener prefilter feeding a U-Net."""

from __future__ import annotations

import numpy as np

from ulw.autodiff import Tensor
from ulw.errors import ConfigError, UsageError
from ulw.params import ParamStore
from ulw.unet import UNetConfig, init_unet_params, unet_forward
from ulw.wiener import DEFAULT_EPSILON, WienerParams, wiener_forward

PRESETS = ("base", "ulw")


def check_preset(preset: str) -> str:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}, expected one of {PRESETS}")
    return preset


class UlwModel:
    """Bundles the network config, its parameters and the optional Wiener stage.

    wiener_calls counts Wiener evaluations since construction; the base preset
    keeps it at zero because the stage is bypassed entirely, not weighted out.
    """

    def __init__(self, config: UNetConfig, store: ParamStore, wiener: WienerParams | None):
        self.config = config
        self.store = store
        self.wiener = wiener
        self.wiener_calls = 0

    @property
    def preset(self) -> str:
        return "ulw" if self.wiener is not None else "base"

    def forward(self, x: Tensor) -> Tensor:
        if self.wiener is not None:
            self.wiener_calls += 1
            x = wiener_forward(x, self.wiener)
        return unet_forward(x, self.config, self.store)

    __call__ = forward

    def astype(self, dtype) -> "UlwModel":
        store = self.store.astype(dtype)
        wiener = None
        if self.wiener is not None:
            wiener = WienerParams(store["wiener.kernels"], store["wiener.theta"],
                                  self.wiener.epsilon)
        return UlwModel(self.config, store, wiener)


def init_params(config: UNetConfig, seed: int, with_wiener: bool = True,
                epsilon: float = DEFAULT_EPSILON, dtype=np.float32) -> ParamStore:
    """Fresh parameters for the given config, bitwise reproducible per seed.

    The Wiener entries consume no random draws (Gaussian kernels plus a fixed
    theta), so the U-Net weights are identical with or without them.
    """
    store = ParamStore()
    if with_wiener:
        wiener = WienerParams.initial(config.in_channels, epsilon=epsilon, dtype=dtype)
        store.add("wiener.kernels", wiener.kernels)
        store.add("wiener.theta", wiener.theta)
    rng = np.random.Generator(np.random.PCG64(seed))
    init_unet_params(config, rng, store, dtype=dtype)
    return store


def build_model(config: UNetConfig, preset: str, seed: int,
                epsilon: float = DEFAULT_EPSILON, dtype=np.float32) -> UlwModel:
    check_preset(preset)
    store = init_params(config, seed, with_wiener=(preset == "ulw"), epsilon=epsilon, dtype=dtype)
    return model_from_store(config, preset, store, epsilon=epsilon)


def model_from_store(config: UNetConfig, preset: str, store: ParamStore,
                     epsilon: float = DEFAULT_EPSILON) -> UlwModel:
    """Wire an existing parameter store (e.g. a loaded checkpoint) into a model."""
    check_preset(preset)
    wiener = None
    if preset == "ulw":
        for name in ("wiener.kernels", "wiener.theta"):
            if name not in store:
                raise UsageError(f"preset 'ulw' needs parameter {name!r} in the store")
        wiener = WienerParams(store["wiener.kernels"], store["wiener.theta"], epsilon)
    return UlwModel(config, store, wiener)


def ulw_forward(x: Tensor, model: UlwModel) -> Tensor:
    """Run the full pipeline; with the base preset this is exactly the U-Net alone."""
    return model.forward(x)
