"""Run configuration: dataclasses with JSON round-tripping.

Defaults describe the desk-scale ("toy") model used by the tests and
scripts; :func:`full_scale` swaps in the full channel counts (frame 960,
clip 512, audio 512 channels). Unknown keys in a config file are an error.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .backbone import ExtractorParams, make_extractor
from .errors import ConfigError
from .features import FrontendConfig
from .regressor import TrainConfig

ENV_VAR = "TELEQA_CONFIG"


@dataclass
class ExtractorConfig:
    channels: tuple = (8, 16, 16)
    kernel: int = 3
    stride: int = 2
    bias: bool = True
    seed: int = 1
    temporal_kernel: Optional[int] = None

    def build(self, in_channels: int, clip_len: Optional[int] = None) -> ExtractorParams:
        return make_extractor(in_channels, self.channels, self.kernel, self.stride, self.seed,
                              self.bias, self.temporal_kernel,
                              clip_len if self.temporal_kernel else None)


@dataclass
class RegressorConfig:
    hidden_dim: int = 16
    fcn_dims: tuple = (16, 32, 16)


@dataclass
class FusionConfig:
    """Bilinear audio/visual fusion ``c0 + c1*S_a + c2*S_v + c3*S_a*S_v``.

    ``operand`` picks the left input: ``"audio"`` fuses the visual score
    with the audio score; ``"visual"`` fuses the visual score with itself.
    """

    coeffs: tuple = (1.12, 0.007, 0.24, 0.088)
    operand: str = "audio"


@dataclass
class Config:
    frame_extractor: ExtractorConfig = field(default_factory=lambda: ExtractorConfig((8, 16, 16), seed=1))
    clip_extractor: ExtractorConfig = field(
        default_factory=lambda: ExtractorConfig((8, 8, 8), seed=2, temporal_kernel=3))
    audio_extractor: ExtractorConfig = field(default_factory=lambda: ExtractorConfig((8, 16, 16), seed=3))
    clip_len: int = 8
    pool_mode: str = "avg"
    patch_scales: tuple = (0, 4)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    head: RegressorConfig = field(default_factory=lambda: RegressorConfig(8, (16, 32, 16)))
    visual: RegressorConfig = field(default_factory=RegressorConfig)
    audio: RegressorConfig = field(default_factory=RegressorConfig)
    head_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60))
    head_patches: int = 8
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=300))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    modalities: tuple = ("p", "f", "c", "a")
    clamp: tuple = (1.0, 5.0)
    default_score: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.clip_len < 2:
            raise ConfigError("clip_len must be >= 2")
        if self.head_patches < 0:
            raise ConfigError("head_patches must be non-negative")
        if self.pool_mode not in ("avg", "max"):
            raise ConfigError(f"pool_mode must be avg or max, got {self.pool_mode!r}")
        bad = set(self.modalities) - set("pfca")
        if bad or not self.modalities:
            raise ConfigError(f"modalities must be a non-empty subset of p,f,c,a; got {self.modalities}")
        if not set(self.modalities) & set("pfc") and "a" not in self.modalities:
            raise ConfigError("no modality selected")
        if self.fusion.operand not in ("audio", "visual"):
            raise ConfigError("fusion.operand must be 'audio' or 'visual'")
        lo, hi = self.clamp
        if not lo < hi:
            raise ConfigError("clamp range must be increasing")

    @property
    def uses_audio(self) -> bool:
        return "a" in self.modalities

    @property
    def visual_modalities(self) -> tuple:
        return tuple(m for m in self.modalities if m != "a")

    def feature_dims(self) -> dict:
        d0, d1 = self.patch_scales
        return {
            "patch": sum(4**d for d in range(d0, d1 + 1)),
            "frame": 3 * self.frame_extractor.channels[-1],
            "clip": 3 * self.clip_extractor.channels[-1],
            "audio": 3 * self.audio_extractor.channels[-1],
        }

    def visual_dim(self) -> int:
        dims = self.feature_dims()
        return sum(dims[{"p": "patch", "f": "frame", "c": "clip"}[m]] for m in self.visual_modalities)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


_NESTED = {
    Config: {
        "frame_extractor": ExtractorConfig,
        "clip_extractor": ExtractorConfig,
        "audio_extractor": ExtractorConfig,
        "frontend": FrontendConfig,
        "head": RegressorConfig,
        "visual": RegressorConfig,
        "audio": RegressorConfig,
        "head_train": TrainConfig,
        "train": TrainConfig,
        "fusion": FusionConfig,
    }
}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: dict, where: str, base=None):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        if sub is not None:
            value = _build(sub, value, f"{where}.{key}", getattr(base, key, None) if base else None)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, base: Optional[Config] = None) -> Config:
    """Build a config from a (partial) dict layered over ``base`` or the defaults."""
    return _build(Config, data, "config", base if base is not None else Config())


def load_config(path=None, base: Optional[Config] = None) -> Config:
    """Load ``path``, falling back to ``$TELEQA_CONFIG``; defaults when neither is set."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return base if base is not None else Config()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data, base)


def full_scale() -> Config:
    """Full-width extractors and regressors; for dimension checks, not desk training."""
    return Config(
        frame_extractor=ExtractorConfig((32, 64, 960), seed=1),
        clip_extractor=ExtractorConfig((32, 64, 512), seed=2, temporal_kernel=3),
        audio_extractor=ExtractorConfig((32, 64, 512), seed=3),
        head=RegressorConfig(128, (128, 256, 128)),
        visual=RegressorConfig(128, (128, 256, 128)),
        audio=RegressorConfig(128, (128, 256, 128)),
        train=TrainConfig(epochs=60),
        head_train=TrainConfig(epochs=10),
    )
