"""Training configuration, config-file parsing, and seeded RNG streams."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

VARIANTS = ("pmf", "convmf", "convmf-plus", "rconvmf", "vconvmf", "vrconvmf")

# Variants whose published setup rates confidence weighting on by default.
_CONFIDENCE_DEFAULT_ON = {"convmf-plus", "rconvmf", "vconvmf", "vrconvmf"}


class ConfigError(ValueError):
    """Bad configuration value or unparseable config file."""


@dataclass
class TrainConfig:
    """All knobs for one training run.

    ``confidence=None`` resolves per variant: plain PMF and the basic
    convolutional variant train unweighted, the rest weight each observed
    rating by its distance from the scale midpoint.
    """

    variant: str = "vrconvmf"
    latent_dim: int = 50
    lambda_u: float = 1.0
    lambda_v: float = 1.0
    lambda_w: float = 1e-4
    alpha: float = 0.3
    confidence: bool | None = None
    confidence_distance: str = "absolute"  # or "square"
    iterations: int = 30
    repeats: int = 5
    seed: int = 0
    rating_max: float = 5.0

    # text network
    emb_dim: int = 200
    cnn_windows: tuple[int, ...] = (3, 4, 5)
    cnn_filters: int = 100
    proj_hidden: int = 200
    rcnn_hidden: int = 100
    rcnn_context_window: int = 1
    dropout: float = 0.3
    net_lr: float = 0.01
    batch_size: int = 128

    # visual side
    visual_levels: tuple[int, ...] = (2, 3, 4, 5)

    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be positive")
        if self.confidence_distance not in ("absolute", "square"):
            raise ConfigError("confidence_distance must be 'absolute' or 'square'")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def confidence_enabled(self) -> bool:
        if self.confidence is not None:
            return self.confidence
        return self.variant in _CONFIDENCE_DEFAULT_ON

    @property
    def uses_text(self) -> bool:
        return self.variant not in ("pmf",)

    @property
    def uses_visual(self) -> bool:
        return self.variant in ("vconvmf", "vrconvmf")

    @property
    def uses_rcnn(self) -> bool:
        return self.variant in ("rconvmf", "vrconvmf")


_BOOL_WORDS = {"true": True, "yes": True, "on": True, "1": True,
               "false": False, "no": False, "off": False, "0": False}


def _coerce(name: str, text: str, kind):
    text = text.strip()
    if kind is bool or kind == "bool | None":
        word = text.lower()
        if word in ("none", "auto"):
            return None
        if word not in _BOOL_WORDS:
            raise ConfigError(f"{name}: expected a boolean, got {text!r}")
        return _BOOL_WORDS[word]
    if kind is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if kind is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {text!r}") from None
    if kind is tuple or (isinstance(kind, str) and kind.startswith("tuple")):
        try:
            return tuple(int(p) for p in text.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{name}: expected integers, got {text!r}") from None
    return text


def load_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key = value`` lines into a :class:`TrainConfig`.

    Blank lines and ``#`` comments are ignored. Unknown keys are errors so
    typos fail loudly instead of silently training with defaults.
    """
    cfg = base or TrainConfig()
    spec = {f.name: f for f in fields(TrainConfig)}
    updates = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in spec:
                raise ConfigError(f"{path}: line {lineno}: unknown option {key!r}")
            hint = spec[key].type
            if key == "confidence":
                updates[key] = _coerce(key, value, bool)
            elif hint in ("int", int):
                updates[key] = _coerce(key, value, int)
            elif hint in ("float", float):
                updates[key] = _coerce(key, value, float)
            elif isinstance(hint, str) and hint.startswith("tuple"):
                updates[key] = _coerce(key, value, tuple)
            else:
                updates[key] = value.strip()
    return replace(cfg, **updates)


def _stream_keys(seed: int, stream) -> list[int]:
    keys = [int(seed)]
    for part in stream:
        if isinstance(part, str):
            keys.extend(part.encode("utf-8"))
        else:
            keys.append(int(part))
    return keys


def rng(seed: int, *stream) -> np.random.Generator:
    """Named, independent random stream derived from the master seed.

    Every consumer of randomness names its own stream (for example
    ``rng(seed, "split")`` or ``rng(seed, "init", "item")``), so adding or
    removing one consumer never perturbs the others.
    """
    return np.random.default_rng(np.random.SeedSequence(_stream_keys(seed, stream)))


def child_seed(seed: int, *stream) -> int:
    """Integer sub-seed for components that take a seed rather than a stream."""
    return int(np.random.SeedSequence(_stream_keys(seed, stream)).generate_state(1)[0])


def config_to_dict(cfg: TrainConfig) -> dict:
    """JSON-safe mapping; tuples become lists."""
    out = {}
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def config_from_dict(data: dict) -> TrainConfig:
    kwargs = {}
    for f in fields(TrainConfig):
        if f.name in data:
            value = data[f.name]
            kwargs[f.name] = tuple(value) if isinstance(value, list) else value
    return TrainConfig(**kwargs)
