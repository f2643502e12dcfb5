"""Run configuration: every hyperparameter a training run depends on.

Configs round-trip through JSON and are embedded in each checkpoint.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .generator import GeneratorConfig
from .losses import LossWeights


@dataclass
class DatasetConfig:
    kind: str = "moving_sprites"   # "moving_sprites" | "bimodal" | "frame_dir"
    path: str | None = None        # frame_dir: directory written by gen-data
    val_path: str | None = None
    n_sprites: int = 2
    speed: float = 3.0
    glyph_size: int = 28
    train_count: int = 256
    val_count: int = 32
    seq_len: int | None = None     # default: context_len + horizon
    stride: int | None = None      # default: context_len + horizon
    seed: int = 0

    def validate(self):
        if self.kind not in ("moving_sprites", "bimodal", "frame_dir"):
            raise ConfigurationError(f"unknown dataset kind {self.kind!r}", "dataset.kind")
        if self.kind == "frame_dir":
            if not self.path:
                raise ConfigurationError("dataset.path is required for frame_dir data",
                                         "dataset.path")
            if not Path(self.path).is_dir():
                raise ConfigurationError(f"dataset path {self.path} does not exist",
                                         "dataset.path")
        for name in ("train_count", "val_count", "n_sprites", "glyph_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"dataset.{name} must be >= 1", f"dataset.{name}")
        if self.speed <= 0:
            raise ConfigurationError("dataset.speed must be > 0", "dataset.speed")


@dataclass
class ModelConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    betas: tuple = (0.5, 0.999)
    batch_size: int = 16
    steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 500
    val_every: int = 50
    val_mode: str = "prior"         # latents used for validation L1
    manifold_dim: int = 32
    disc_width: int = 16
    encoder_width: int = 16
    autoencoder_path: str | None = None
    autoencoder_steps: int = 2000
    vae_path_uses_posterior: bool = False
    share_dvae_weights: bool = False
    l1_reduction: str = "mean"
    dtype: str = "float32"

    @property
    def task(self):
        return f"{self.generator.context_len}->{self.generator.horizon}"

    def validate(self):
        for name in ("batch_size", "checkpoint_every", "val_every", "manifold_dim",
                     "disc_width", "encoder_width"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1", name)
        for name in ("steps", "autoencoder_steps"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0", name)
        for name in ("lr_generator", "lr_discriminator"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0", name)
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigurationError("betas must be two values in [0, 1)", "betas")
        if self.generator.horizon < 1:
            raise ConfigurationError("training needs horizon >= 1", "generator.horizon")
        if self.l1_reduction not in ("mean", "sum"):
            raise ConfigurationError("l1_reduction must be 'mean' or 'sum'", "l1_reduction")
        if self.val_mode not in ("prior", "posterior"):
            raise ConfigurationError("val_mode must be 'prior' or 'posterior'", "val_mode")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64", "dtype")
        self.dataset.validate()
        return self

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d, validate=True):
        d = dict(d)
        nested = {"generator": GeneratorConfig, "weights": LossWeights, "dataset": DatasetConfig}
        kwargs = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in d.items():
            if key not in known:
                raise ConfigurationError(f"unknown config field {key!r}", key)
            if key in nested:
                if not isinstance(value, dict):
                    raise ConfigurationError(f"{key} must be an object", key)
                sub = nested[key]
                sub_known = {f.name for f in dataclasses.fields(sub)}
                for k in value:
                    if k not in sub_known:
                        raise ConfigurationError(f"unknown config field {key}.{k}", f"{key}.{k}")
                try:
                    value = sub(**value)
                except ConfigurationError as e:
                    raise ConfigurationError(str(e), f"{key}.{e.field}" if e.field else key) from e
                except (TypeError, ValueError) as e:
                    raise ConfigurationError(f"{key}: {e}", key) from e
            elif key == "betas":
                value = tuple(value)
            kwargs[key] = value
        cfg = cls(**kwargs)
        return cfg.validate() if validate else cfg

    @classmethod
    def from_json(cls, path, validate=True):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"cannot read config {path}: {e}", "config") from e
        return cls.from_dict(d, validate)
