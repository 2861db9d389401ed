"""Batch export of poster features in the ``#vrcmf-feat v1`` text format.

Each output line is ``item_id<TAB>level<TAB>h,w,c<TAB>v1,v2,...`` with values
written via ``repr`` so files round-trip bit-exactly through the consumer.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
from torch import nn

from posterfeat.network import DEFAULT_LEVELS, extract_feature_maps
from posterfeat.preprocess import ExporterError, preprocess_image

FEATURE_MAGIC = "#vrcmf-feat v1"

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff")

logger = logging.getLogger(__name__)


def write_feature_file(features: dict[str, dict[int, np.ndarray]], path: str | os.PathLike) -> int:
    """Write ``{item_id: {level: array}}`` to one feature file.

    Arrays must be (h, w, c); a flat vector of length c is accepted and stored
    as a 1x1xc map.  Returns the number of data lines written.
    """
    lines = 0
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(FEATURE_MAGIC + "\n")
        for item_id, maps in features.items():
            for level in sorted(maps):
                array = np.asarray(maps[level], dtype=np.float64)
                if array.ndim == 1:
                    array = array.reshape(1, 1, -1)
                if array.ndim != 3:
                    raise ExporterError(
                        f"feature map for item {item_id!r} level {level} must be "
                        f"(h, w, c), got shape {array.shape}"
                    )
                height, width, channels = array.shape
                values = ",".join(repr(float(value)) for value in array.ravel())
                handle.write(f"{item_id}\t{int(level)}\t{height},{width},{channels}\t{values}\n")
                lines += 1
    return lines


def read_manifest(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Parse a ``item_id<TAB>image_path`` manifest; blank lines are skipped."""
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    try:
        handle = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise ExporterError(f"manifest file not found: {os.fspath(path)!r}") from None
    with handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ExporterError(
                    f"{os.fspath(path)}: line {lineno}: expected 'item_id<TAB>image_path'"
                )
            item_id, image_path = parts
            if item_id in seen:
                raise ExporterError(
                    f"{os.fspath(path)}: line {lineno}: duplicate item id {item_id!r}"
                )
            seen.add(item_id)
            entries.append((item_id, image_path))
    if not entries:
        raise ExporterError(f"manifest {os.fspath(path)!r} lists no images")
    return entries


def scan_directory(root: str | os.PathLike) -> list[tuple[str, str]]:
    """List image files under ``root`` (non-recursive); the stem is the item id."""
    directory = Path(root)
    if not directory.is_dir():
        raise ExporterError(f"not a directory: {os.fspath(root)!r}")
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    for candidate in sorted(directory.iterdir()):
        if candidate.is_file() and candidate.suffix.lower() in IMAGE_EXTENSIONS:
            if candidate.stem in seen:
                raise ExporterError(
                    f"duplicate item id {candidate.stem!r} in {os.fspath(root)!r}; "
                    "use a manifest to disambiguate"
                )
            seen.add(candidate.stem)
            entries.append((candidate.stem, str(candidate)))
    if not entries:
        raise ExporterError(f"no image files found in {os.fspath(root)!r}")
    return entries


def export_features(
    entries: list[tuple[str, str]],
    module: nn.Module,
    out_path: str | os.PathLike,
    levels: tuple[int, ...] = DEFAULT_LEVELS,
    pooled: bool = True,
) -> tuple[int, int]:
    """Preprocess and export every (item_id, image_path) entry to one file.

    Images that cannot be decoded are skipped with a warning rather than
    aborting the batch.  Returns ``(exported, skipped)`` counts.
    """
    features: dict[str, dict[int, np.ndarray]] = {}
    skipped = 0
    for item_id, image_path in entries:
        try:
            record = preprocess_image(image_path, item_id=item_id)
        except ExporterError as exc:
            logger.warning("skipping item %r: %s", item_id, exc)
            skipped += 1
            continue
        features[item_id] = extract_feature_maps(record, module, levels=levels, pooled=pooled)
    write_feature_file(features, out_path)
    return len(features), skipped
