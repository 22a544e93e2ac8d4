"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from ulw.data import ImagePair, SmokeRecipe, synth_smoke, synth_tissue


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_pairs(count: int, size: int, seed: int) -> list:
    """Small in-memory smoky/clean pairs without touching the filesystem."""
    pairs = []
    for i in range(count):
        clean = synth_tissue(size, size, field_seed=seed * 1000 + i,
                             detail_seed=seed * 2000 + i)
        recipe = SmokeRecipe(density=0.6, noise_scale=size / 4.0, seed=seed * 3000 + i)
        pairs.append(ImagePair(f"{i:04d}", synth_smoke(clean, recipe), clean))
    return pairs


@pytest.fixture
def tiny_pairs():
    return make_pairs(4, 32, seed=5)
