"""Shared fixtures for the poster feature exporter tests.

The real published network weights are hundreds of megabytes, so the suite
runs against a seeded synthetic state dict with the exact same layout.  The
weights are scaled by 1/sqrt(fan-in) to keep activations finite through all
nineteen layers; biases get small noise so an all-zero input still produces
nonzero activations.
"""

import math

import numpy as np
import pytest
import torch
from PIL import Image

from posterfeat import build_features, load_weights


def synthetic_state(seed=0):
    """Seeded state dict matching the 19-layer convolution stack layout."""
    generator = torch.Generator().manual_seed(seed)
    state = {}
    for name, tensor in build_features().state_dict().items():
        if name.endswith("weight"):
            fan_in = tensor.shape[1] * tensor.shape[2] * tensor.shape[3]
            state[name] = torch.randn(tensor.shape, generator=generator) / math.sqrt(fan_in)
        else:
            state[name] = 0.01 * torch.randn(tensor.shape, generator=generator)
    return state


@pytest.fixture(scope="session")
def state_dict():
    return synthetic_state()


@pytest.fixture(scope="session")
def weights_file(state_dict, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "features.pt"
    torch.save(state_dict, path)
    return path


@pytest.fixture(scope="session")
def network(weights_file):
    return load_weights(weights_file)


def test_image_array(seed, width, height):
    """Deterministic RGB test pattern: smooth gradients plus seeded noise."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, width)[np.newaxis, :]
    y = np.linspace(0.0, 1.0, height)[:, np.newaxis]
    base = np.stack([x * y, 0.5 + 0.5 * x * (1.0 - y), y * (1.0 - x)], axis=2)
    noisy = np.clip(0.75 * base + 0.25 * rng.random((height, width, 3)), 0.0, 1.0)
    return (255.0 * noisy).astype(np.uint8)


@pytest.fixture
def make_image(tmp_path):
    """Factory writing a deterministic PNG into the test's tmp directory."""

    def _make(name="poster.png", seed=0, width=120, height=90):
        path = tmp_path / name
        Image.fromarray(test_image_array(seed, width, height), mode="RGB").save(path)
        return path

    return _make
