"""Poster-image preprocessing and pooled deep-feature export.

The package turns a folder (or manifest) of poster images into the
``#vrcmf-feat v1`` feature files consumed by the ``vrcmf`` recommender:
images are resized to a fixed 182x268 canvas, contrast-normalised, pushed
through a frozen 19-layer convolutional network, and the activations of the
last four pooling stages are written out either as full maps or as
channel-wise averaged vectors.
"""

from posterfeat.export import (
    FEATURE_MAGIC,
    export_features,
    read_manifest,
    scan_directory,
    write_feature_file,
)
from posterfeat.network import (
    LEVEL_CHANNELS,
    build_features,
    extract_feature_maps,
    load_weights,
)
from posterfeat.preprocess import (
    TARGET_HEIGHT,
    TARGET_WIDTH,
    ExporterError,
    ImageRecord,
    equalize_luminance,
    load_rgb,
    minmax_scale,
    preprocess_image,
    resize_rgb,
)

__version__ = "0.1.0"

__all__ = [
    "FEATURE_MAGIC",
    "LEVEL_CHANNELS",
    "TARGET_HEIGHT",
    "TARGET_WIDTH",
    "ExporterError",
    "ImageRecord",
    "build_features",
    "equalize_luminance",
    "export_features",
    "extract_feature_maps",
    "load_rgb",
    "load_weights",
    "minmax_scale",
    "preprocess_image",
    "read_manifest",
    "resize_rgb",
    "scan_directory",
    "write_feature_file",
]
