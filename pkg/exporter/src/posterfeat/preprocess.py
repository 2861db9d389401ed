"""Image loading and normalisation for the poster feature exporter.

Every poster is brought onto a common footing before feature extraction:

1. decode to RGB and resize (bilinear) to a fixed 182x268 canvas,
2. stretch each colour channel independently to span ``[0, 1]``,
3. equalise the luminance histogram, rescaling the colour channels by the
   luminance ratio so hue is preserved.

The result is a ``float64`` array of shape ``(182, 268, 3)`` with values in
``[0, 1]``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

TARGET_HEIGHT = 182
TARGET_WIDTH = 268

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class ExporterError(ValueError):
    """Raised for unusable inputs: bad images, manifests, or weight files."""


@dataclass
class ImageRecord:
    """A preprocessed poster ready for feature extraction."""

    item_id: str
    path: str
    tensor: np.ndarray  # (TARGET_HEIGHT, TARGET_WIDTH, 3) float64 in [0, 1]


def load_rgb(path: str | os.PathLike) -> np.ndarray:
    """Decode an image file into a ``uint8`` RGB array of shape (h, w, 3)."""
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"))
    except FileNotFoundError:
        raise ExporterError(f"image file not found: {os.fspath(path)!r}") from None
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ExporterError(f"cannot decode image {os.fspath(path)!r}: {exc}") from None


def resize_rgb(
    pixels: np.ndarray,
    height: int = TARGET_HEIGHT,
    width: int = TARGET_WIDTH,
) -> np.ndarray:
    """Bilinearly resize an RGB array to (height, width, 3) ``float64``."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ExporterError(f"expected an RGB array of shape (h, w, 3), got {pixels.shape}")
    image = Image.fromarray(pixels.astype(np.uint8), mode="RGB")
    resized = image.resize((width, height), Image.BILINEAR)
    return np.asarray(resized, dtype=np.float64)


def minmax_scale(pixels: np.ndarray) -> np.ndarray:
    """Stretch each colour channel independently onto ``[0, 1]``.

    A constant channel (max == min) is mapped to all zeros rather than
    dividing by zero.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3:
        raise ExporterError(f"expected an array of shape (h, w, c), got {pixels.shape}")
    lo = pixels.min(axis=(0, 1))
    span = pixels.max(axis=(0, 1)) - lo
    scaled = np.zeros_like(pixels)
    for channel in range(pixels.shape[2]):
        if span[channel] > 0.0:
            scaled[..., channel] = (pixels[..., channel] - lo[channel]) / span[channel]
    return scaled


def equalize_luminance(pixels: np.ndarray) -> np.ndarray:
    """Equalise the luminance distribution of an RGB array with values in [0, 1].

    Luminance (the 0.299/0.587/0.114 weighted channel sum) is remapped through
    the affinely normalised average-rank transform: the darkest pixels land on
    0, the brightest on 1, ties share one target, and intermediate values are
    spaced by their cumulative mass.  Ranking the exact values (rather than a
    quantised histogram) makes the operation idempotent -- re-equalising an
    equalised image leaves the luminance distribution in place.  Colour
    channels are rescaled by the new/old luminance ratio; when that would push
    a channel past 1 the pixel is desaturated toward gray along the
    constant-luminance segment instead of clipped, so the target luminance is
    hit exactly.  Constant-luminance images are returned unchanged.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ExporterError(f"expected an RGB array of shape (h, w, 3), got {pixels.shape}")
    luma = pixels @ _LUMA_WEIGHTS
    values, inverse, counts = np.unique(
        luma.ravel(), return_inverse=True, return_counts=True)
    if values.size == 1:  # constant luminance: nothing to spread
        return pixels.copy()
    top_rank = np.cumsum(counts)
    average_rank = top_rank - (counts - 1) / 2.0
    low, high = average_rank[0], average_rank[-1]
    target = ((average_rank - low) / (high - low))[inverse].reshape(luma.shape)
    target = target[..., np.newaxis]
    safe_luma = np.where(luma > 0.0, luma, 1.0)
    ratio = np.where(luma > 0.0, target[..., 0] / safe_luma, 0.0)
    scaled = pixels * ratio[..., np.newaxis]
    # Desaturate out-of-range pixels toward gray without changing luminance:
    # every point on the segment from (t, t, t) to the scaled pixel has the
    # same weighted channel sum t, so shrinking along it keeps the histogram.
    offset = scaled - target
    with np.errstate(divide="ignore", invalid="ignore"):
        limit = np.where(scaled > 1.0, (1.0 - target) / offset, np.inf)
    shrink = np.minimum(1.0, limit.min(axis=2))
    return np.clip(target + shrink[..., np.newaxis] * offset, 0.0, 1.0)


def preprocess_image(path: str | os.PathLike, item_id: str | None = None) -> ImageRecord:
    """Load, resize, scale, and equalise one poster image."""
    pixels = resize_rgb(load_rgb(path))
    tensor = equalize_luminance(minmax_scale(pixels))
    if item_id is None:
        item_id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return ImageRecord(item_id=item_id, path=os.fspath(path), tensor=tensor)
