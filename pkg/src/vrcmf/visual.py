"""Precomputed visual feature maps: loading, pooling, cascading.

Feature files are line-oriented: a `#vrcmf-feat v1` header, then one
record per line, `item_id<TAB>level<TAB>h,w,c<TAB>comma-separated
row-major floats`. Levels index the source network's pooling stages and
fix the channel count; records may carry raw maps or already-pooled
1x1xc vectors, and both reduce to the same per-level vector here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

FEATURE_MAGIC = "#vrcmf-feat v1"
LEVEL_CHANNELS = {2: 128, 3: 256, 4: 512, 5: 512}


class VisualError(ValueError):
    """Malformed feature file or inconsistent level data."""


@dataclass
class FeatureMapSet:
    """All loaded maps for one item, keyed by pooling level."""

    item_id: str
    maps: dict  # level -> (h, w, c) array

    def has_levels(self, levels) -> bool:
        return all(level in self.maps for level in levels)


@dataclass
class VisualFeature:
    item_id: str
    vector: np.ndarray
    levels: tuple


def visual_dim(levels) -> int:
    return sum(LEVEL_CHANNELS[level] for level in levels)


def global_average_pool(feature_map: np.ndarray) -> np.ndarray:
    """Per-channel mean over all spatial positions of an (h, w, c) map."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.ndim != 3 or 0 in feature_map.shape:
        raise VisualError(f"expected a nonempty (h, w, c) map, got shape {feature_map.shape}")
    return feature_map.mean(axis=(0, 1))


def cascade_visual(feature_set: FeatureMapSet, levels) -> VisualFeature:
    """Pooled level vectors concatenated in ascending level order."""
    levels = tuple(sorted(int(level) for level in levels))
    if not levels:
        raise VisualError("empty level selection")
    parts = []
    for level in levels:
        if level not in feature_set.maps:
            raise VisualError(f"item {feature_set.item_id!r} is missing level {level}")
        parts.append(global_average_pool(feature_set.maps[level]))
    return VisualFeature(item_id=feature_set.item_id,
                         vector=np.concatenate(parts), levels=levels)


def load_feature_maps(path) -> dict:
    """Parse a feature file into item-keyed :class:`FeatureMapSet` values."""
    out: dict[str, FeatureMapSet] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != FEATURE_MAGIC:
            raise VisualError(f"{path}: expected header {FEATURE_MAGIC!r}, found {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise VisualError(f"{path}: line {lineno}: expected 4 tab-separated fields")
            item_id, level_text, shape_text, values_text = parts
            try:
                level = int(level_text)
            except ValueError:
                raise VisualError(f"{path}: line {lineno}: bad level {level_text!r}") from None
            if level not in LEVEL_CHANNELS:
                raise VisualError(f"{path}: line {lineno}: unknown level {level}")
            try:
                h, w, c = (int(v) for v in shape_text.split(","))
            except ValueError:
                raise VisualError(f"{path}: line {lineno}: bad shape {shape_text!r}") from None
            if c != LEVEL_CHANNELS[level]:
                raise VisualError(
                    f"{path}: line {lineno}: item {item_id!r} level {level} "
                    f"expects {LEVEL_CHANNELS[level]} channels, got {c}")
            try:
                values = np.array([float(v) for v in values_text.split(",")]) \
                    if values_text else np.empty(0)
            except ValueError:
                raise VisualError(f"{path}: line {lineno}: unparseable feature values") from None
            if values.size != h * w * c:
                raise VisualError(
                    f"{path}: line {lineno}: expected {h * w * c} values, got {values.size}")
            if not np.all(np.isfinite(values)):
                raise VisualError(f"{path}: line {lineno}: non-finite feature values")
            entry = out.setdefault(item_id, FeatureMapSet(item_id=item_id, maps={}))
            if level in entry.maps:
                raise VisualError(
                    f"{path}: line {lineno}: duplicate level {level} for item {item_id!r}")
            entry.maps[level] = values.reshape(h, w, c)
    return out


def load_visual_vectors(path, levels=(2, 3, 4, 5)) -> dict:
    """Cascaded vectors for every item that has all requested levels.

    Items missing a level are skipped (counted in one warning); the
    engine then falls back to a zero visual feature for them.
    """
    levels = tuple(sorted(int(level) for level in levels))
    sets = load_feature_maps(path)
    vectors = {}
    skipped = 0
    for item_id, feature_set in sets.items():
        if feature_set.has_levels(levels):
            vectors[item_id] = cascade_visual(feature_set, levels).vector
        else:
            skipped += 1
    if skipped:
        logger.warning("%d of %d items lack some of levels %s; skipped",
                       skipped, len(sets), list(levels))
    return vectors


def write_feature_file(items: dict, path) -> None:
    """Serialize item maps; ``load_feature_maps`` round-trips the result.

    ``items`` maps item_id to {level: array}; arrays may be (h, w, c)
    maps or flat c-vectors (written as 1x1xc).
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FEATURE_MAGIC + "\n")
        for item_id in items:
            for level in sorted(items[item_id]):
                arr = np.asarray(items[item_id][level], dtype=np.float64)
                if arr.ndim == 1:
                    arr = arr.reshape(1, 1, -1)
                if arr.ndim != 3:
                    raise VisualError(f"item {item_id!r} level {level}: expected 1-D or 3-D data")
                h, w, c = arr.shape
                flat = ",".join(repr(float(v)) for v in arr.ravel())
                fh.write(f"{item_id}\t{int(level)}\t{h},{w},{c}\t{flat}\n")
