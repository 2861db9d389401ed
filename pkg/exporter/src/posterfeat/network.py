"""Frozen 19-layer convolutional network and feature-map extraction.

The network is the standard 19-layer architecture — sixteen 3x3 convolutions
(with ReLU) interleaved with five 2x2 max-pooling stages — and is used purely
as a fixed feature extractor: weights are loaded from a state-dict file and
never trained here.  Features are taken from the outputs of pooling stages
2 through 5, whose channel counts are 128, 256, 512, and 512.
"""

from __future__ import annotations

import os

import numpy as np
import torch
from torch import nn

from posterfeat.preprocess import ExporterError, ImageRecord

# Channel layout of the convolution stack; "M" marks a 2x2 max-pool.
_LAYOUT = (
    64, 64, "M",
    128, 128, "M",
    256, 256, 256, 256, "M",
    512, 512, 512, 512, "M",
    512, 512, 512, 512, "M",
)

# Exportable pooling stages and their channel counts; stage 1 is omitted
# because the consumer only accepts these four levels.
LEVEL_CHANNELS = {2: 128, 3: 256, 4: 512, 5: 512}

DEFAULT_LEVELS = (2, 3, 4, 5)


def build_features() -> nn.Sequential:
    """Build the (untrained) convolution stack in evaluation mode."""
    layers: list[nn.Module] = []
    in_channels = 3
    for item in _LAYOUT:
        if item == "M":
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        else:
            layers.append(nn.Conv2d(in_channels, item, kernel_size=3, padding=1))
            layers.append(nn.ReLU())
            in_channels = item
    module = nn.Sequential(*layers)
    module.eval()
    for parameter in module.parameters():
        parameter.requires_grad_(False)
    return module


def load_weights(path: str | os.PathLike) -> nn.Sequential:
    """Load a state dict into the convolution stack.

    Accepts either a dict for the convolution stack alone or a full-model
    dict whose convolution entries are prefixed with ``features.`` (the
    classifier entries are ignored).  A missing file is fatal: the exporter
    never invents weights.
    """
    if not os.path.exists(path):
        raise ExporterError(
            f"weights file not found: {os.fspath(path)!r}. Save the published "
            "19-layer weights once, e.g. "
            "python -c \"import torch, torchvision; torch.save("
            "torchvision.models.vgg19(weights='IMAGENET1K_V1').state_dict(), "
            "'vgg19.pt')\", then pass that file via --weights."
        )
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExporterError(f"cannot read weights file {os.fspath(path)!r}: {exc}") from None
    if not isinstance(state, dict):
        raise ExporterError(f"weights file {os.fspath(path)!r} does not hold a state dict")
    if any(key.startswith("features.") for key in state):
        state = {
            key[len("features."):]: value
            for key, value in state.items()
            if key.startswith("features.")
        }
    module = build_features()
    try:
        module.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise ExporterError(
            f"weights file {os.fspath(path)!r} does not match the 19-layer layout: {exc}"
        ) from None
    module.eval()
    return module


def extract_feature_maps(
    image: ImageRecord | np.ndarray,
    module: nn.Sequential,
    levels: tuple[int, ...] = DEFAULT_LEVELS,
    pooled: bool = True,
) -> dict[int, np.ndarray]:
    """Run one preprocessed image through the network and capture pool outputs.

    Returns ``{level: array}`` where each array is ``float64`` with shape
    (h, w, c) for raw maps, or (1, 1, c) when ``pooled`` (the channel-wise
    spatial average of the raw map).
    """
    pixels = image.tensor if isinstance(image, ImageRecord) else np.asarray(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ExporterError(f"expected an RGB tensor of shape (h, w, 3), got {pixels.shape}")
    levels = tuple(sorted({int(level) for level in levels}))
    if not levels:
        raise ExporterError("at least one feature level is required")
    unknown = [level for level in levels if level not in LEVEL_CHANNELS]
    if unknown:
        raise ExporterError(
            f"unsupported feature levels {unknown}; choose from {sorted(LEVEL_CHANNELS)}"
        )
    batch = torch.from_numpy(
        np.ascontiguousarray(pixels.transpose(2, 0, 1))[np.newaxis]
    ).to(torch.float32)
    captured: dict[int, np.ndarray] = {}
    pool_stage = 0
    with torch.no_grad():
        for layer in module:
            batch = layer(batch)
            if isinstance(layer, nn.MaxPool2d):
                pool_stage += 1
                if pool_stage in levels:
                    feature_map = (
                        batch[0].permute(1, 2, 0).numpy().astype(np.float64)
                    )
                    if pooled:
                        feature_map = feature_map.mean(axis=(0, 1)).reshape(1, 1, -1)
                    captured[pool_stage] = feature_map
                if pool_stage >= levels[-1]:
                    break
    for level, feature_map in captured.items():
        if not np.all(np.isfinite(feature_map)):
            raise ExporterError(f"non-finite activations at feature level {level}")
    return captured
