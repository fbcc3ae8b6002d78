"""Experiment configuration.

A config is a JSON object with a ``format_version`` and nested blocks::

    {
      "format_version": 1,
      "seed": 0,
      "scenes": {"train_count": 200, "val_count": 40, "height": 64, "width": 64,
                 "k_range": [8, 30], "depth_mode": "radial", "depth_range": [1, 10],
                 "density_mode": "blobs", "beta_range": [0.02, 0.25], "blobs": 4,
                 "blob_sigma": [0.1, 0.3],
                 "airlight_range": [0.7, 1.0], "airlight_tint": 0.0},
      "grid": ["haze_gray", "haze_seg:oracle"],
      "model": {"size_tier": "tiny", "input_channels": 4},
      "train": {"epochs": 60, "batch_size": 8, "lr": 0.001, "patch_size": 64,
                "optimizer": "rmsprop"},
      "degradation": {...},
      "dataset": null,
      "val_count": 40,
      "output_dir": "runs/default"
    }

Grid cells are ``variant`` or ``variant:tier``.  Any key can be overridden
with a dotted path, e.g. ``train.epochs=20``.
"""

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from ..dehazenet import MaskVariant, ModelConfig, TrainHyper
from ..errors import ConfigError
from ..scatter import SceneConfig
from ..segbackend import tier as lookup_tier

FORMAT_VERSION = 1


@dataclass
class SceneBlock:
    train_count: int = 200
    val_count: int = 40
    height: int = 64
    width: int = 64
    k_range: tuple = (8, 30)
    depth_mode: str = "radial"
    depth_range: tuple = (1.0, 10.0)
    density_mode: str = "blobs"
    beta_range: tuple = (0.02, 0.25)
    blobs: int = 4
    blob_sigma: tuple = (0.1, 0.3)
    airlight_range: tuple = (0.7, 1.0)
    airlight_tint: float = 0.0

    @property
    def count(self):
        return self.train_count + self.val_count

    def scene_config(self, regions):
        return SceneConfig(
            height=self.height,
            width=self.width,
            regions=regions,
            depth_mode=self.depth_mode,
            depth_range=tuple(self.depth_range),
            density_mode=self.density_mode,
            beta_range=tuple(self.beta_range),
            blobs=self.blobs,
            blob_sigma=tuple(self.blob_sigma),
            airlight_range=tuple(self.airlight_range),
            airlight_tint=self.airlight_tint,
        )


@dataclass
class DegradationBlock:
    scenes: int = 20
    betas: tuple = (0.0, 0.05, 0.1, 0.2)
    tier: str = "middle"
    regions: int = 20
    height: int = 64
    width: int = 64
    depth_mode: str = "region"
    depth_range: tuple = (1.0, 5.0)
    airlight_range: tuple = (0.8, 1.0)

    def scene_config(self):
        return SceneConfig(
            height=self.height,
            width=self.width,
            regions=self.regions,
            depth_mode=self.depth_mode,
            depth_range=tuple(self.depth_range),
            density_mode="uniform",
            beta_range=(0.0, 0.0),
            airlight_range=tuple(self.airlight_range),
        )


@dataclass
class ModelBlock:
    size_tier: str = "tiny"
    input_channels: int = 4

    def model_config(self):
        return ModelConfig.from_tier(self.size_tier, self.input_channels)


@dataclass
class ExperimentConfig:
    seed: int = 0
    scenes: SceneBlock = field(default_factory=SceneBlock)
    grid: list = field(default_factory=lambda: ["haze_gray", "haze_seg:oracle"])
    model: ModelBlock = field(default_factory=ModelBlock)
    train: TrainHyper = field(default_factory=TrainHyper)
    degradation: DegradationBlock = field(default_factory=DegradationBlock)
    dataset: str = None
    val_count: int = 40
    output_dir: str = "runs/default"
    format_version: int = FORMAT_VERSION

    def cells(self):
        """Parse the grid into ``(variant, tier)`` pairs; tier is None for gray variants."""
        out = []
        for cell in self.grid:
            name, _, tier_name = str(cell).partition(":")
            try:
                variant = MaskVariant(name)
            except ValueError:
                raise ConfigError(f"unknown mask variant {name!r}") from None
            if variant.uses_segmenter:
                tier_name = tier_name or "oracle"
                lookup_tier(tier_name)
            elif tier_name:
                raise ConfigError(f"{name} takes no segmenter tier")
            out.append((variant, tier_name or None))
        if len(set(out)) != len(out):
            raise ConfigError("grid lists a cell twice")
        return out

    def validate(self):
        if self.format_version != FORMAT_VERSION:
            raise ConfigError(f"unsupported config format version {self.format_version}")
        lo, hi = self.scenes.k_range
        if not 1 <= lo <= hi:
            raise ConfigError("scenes.k_range must satisfy 1 <= lo <= hi")
        self.scenes.scene_config(hi).validate()
        self.model.model_config().validate()
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be positive")
        self.cells()
        return self

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path):
        Path(path).write_text(self.dumps() + "\n")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where + '.' if where else ''}{key}")
        default = getattr(cls(), key) if key in known else None
        if is_dataclass(default):
            value = _build(type(default), value, f"{where}.{key}" if where else key)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data):
    return _build(ExperimentConfig, data, "").validate()


def load(path):
    try:
        data = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def apply_overrides(config, overrides):
    """Apply ``dotted.key=value`` strings; values are parsed as JSON when possible."""
    data = config.to_dict()
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return from_dict(data)
