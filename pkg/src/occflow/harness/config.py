"""Experiment configuration and the flat ``section.key = value`` config file format.

Example::

    profile = micro
    train.epochs = 40
    fusion.variant = vgg_only
    loss.alpha = 1000

``profile`` selects a preset (``default``, ``micro`` or ``paper``) before the
remaining keys are applied. ``OCCFLOW_SEED`` in the environment overrides
``train.seed``.
"""
from __future__ import annotations

import ast
import dataclasses
import os
from dataclasses import dataclass, field

from ..backbone import BackboneConfig
from ..errors import ConfigError, OccFlowError
from ..fusion_net import FusionConfig
from ..objective import LossConfig
from ..raster_gt import GridSpec
from ..scene_kit import SceneRecipe
from ..vectorizer import VectorConfig

PROFILES = ("default", "micro", "paper")
SEED_ENV = "OCCFLOW_SEED"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 16
    lr_init: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_decay_every_epochs: int = 5
    seed: int = 0
    variant: str = "fused"
    micro_mode: bool = False
    # 0 means no cap; otherwise stop after this many optimizer steps
    max_steps: int = 0
    eval_every_epochs: int = 1
    threads: int = 1
    paper_batch_size: int = 32

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.lr_decay_every_epochs < 1:
            raise ConfigError("train: batch_size, epochs and lr_decay_every_epochs must be >= 1")
        if self.lr_init <= 0 or not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("train: lr_init must be > 0 and lr_decay_factor in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        return self.lr_init * self.lr_decay_factor ** (epoch // self.lr_decay_every_epochs)


@dataclass(frozen=True)
class DataConfig:
    num_train: int = 64
    num_val: int = 16
    val_seed_offset: int = 100000


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    vectors: VectorConfig = field(default_factory=VectorConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    recipe: SceneRecipe = field(default_factory=SceneRecipe)
    data: DataConfig = field(default_factory=DataConfig)

    def with_variant(self, variant: str) -> "ExperimentConfig":
        return dataclasses.replace(
            self,
            fusion=dataclasses.replace(self.fusion, variant=variant),
            train=dataclasses.replace(self.train, variant=variant),
        )

    def architecture(self) -> dict:
        """The part of the config a checkpoint's parameters depend on."""
        return {
            "grid": to_plain(self.grid),
            "vectors": to_plain(self.vectors),
            "backbone": to_plain(self.backbone),
            "fusion": to_plain(self.fusion),
        }


SECTIONS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def micro_config() -> ExperimentConfig:
    """64 x 64 grid, VGG widths capped at 64 and 128 fused channels; 80 m field of view kept."""
    return ExperimentConfig(
        grid=GridSpec(height=64, width=64, pixels_per_meter=0.8),
        vectors=VectorConfig(max_road_vectors=256),
        backbone=BackboneConfig(
            grid_size=64, vgg_widths=(64, 64, 64, 64, 64), hidden_dim=128, vector_dim=32
        ),
        fusion=FusionConfig(head_channels=32),
        train=TrainConfig(micro_mode=True),
    )


def paper_config() -> ExperimentConfig:
    return ExperimentConfig(train=TrainConfig(batch_size=32))


def preset(profile: str) -> ExperimentConfig:
    if profile == "micro":
        return micro_config()
    if profile == "paper":
        return paper_config()
    if profile == "default":
        return ExperimentConfig()
    raise ConfigError(f"profile: expected one of {PROFILES}, got {profile!r}")


def to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    return obj


def _coerce(value, default, key):
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
        if isinstance(value, (bool, int)):
            return bool(value)
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(default, tuple):
        if isinstance(value, (list, tuple)):
            return tuple(value)
        raise ConfigError(f"{key}: expected a tuple, got {value!r}")
    if isinstance(default, dict):
        if isinstance(value, dict):
            return value
        raise ConfigError(f"{key}: expected a dict, got {value!r}")
    if isinstance(default, str):
        return str(value)
    return value


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config_text(text: str) -> dict:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        entries[key] = _parse_value(raw)
    return entries


def apply_overrides(base: ExperimentConfig, entries: dict) -> ExperimentConfig:
    grouped: dict[str, dict] = {}
    for key, value in entries.items():
        if key == "profile":
            continue
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(base, section)
        names = {f.name for f in dataclasses.fields(current)}
        if name not in names:
            raise ConfigError(f"unknown config key {key!r}")
        grouped.setdefault(section, {})[name] = _coerce(value, getattr(current, name), key)
    try:
        updated = {s: dataclasses.replace(getattr(base, s), **kv) for s, kv in grouped.items()}
        cfg = dataclasses.replace(base, **updated)
        if "train.variant" in entries and "fusion.variant" not in entries:
            cfg = cfg.with_variant(cfg.train.variant)
        elif "fusion.variant" in entries:
            cfg = cfg.with_variant(cfg.fusion.variant)
        _cross_check(cfg)
    except ConfigError:
        raise
    except (OccFlowError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _cross_check(cfg: ExperimentConfig):
    if cfg.backbone.grid_size != cfg.grid.height:
        raise ConfigError("backbone.grid_size must equal grid.height")
    expected = cfg.recipe.t_hist + 3
    if cfg.backbone.in_channels != expected:
        raise ConfigError(f"backbone.in_channels must be t_hist + 3 = {expected}")
    if cfg.vectors.vectors_per_agent != cfg.recipe.t_hist - 1:
        raise ConfigError("vectors.vectors_per_agent must be recipe.t_hist - 1")
    cfg.recipe.validate()


def load_config(path=None, text: str | None = None, env=None) -> ExperimentConfig:
    """Read a config file (or text); missing path means the default profile."""
    entries = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if text is not None:
        entries = parse_config_text(text)
    profile = str(entries.get("profile", "default"))
    micro_flag = entries.get("train.micro_mode")
    if profile == "default" and micro_flag is not None and _coerce(micro_flag, False, "train.micro_mode"):
        profile = "micro"
    cfg = apply_overrides(preset(profile), entries)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=seed))
    return cfg


def config_from_plain(d: dict) -> ExperimentConfig:
    """Rebuild a config from :func:`to_plain` output (as stored in checkpoints)."""
    entries = {}
    for section, values in d.items():
        for name, value in values.items():
            entries[f"{section}.{name}"] = value
    micro = bool(d.get("train", {}).get("micro_mode", False))
    return apply_overrides(preset("micro" if micro else "default"), entries)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, values in to_plain(cfg).items():
        for name, value in values.items():
            if isinstance(value, list):
                value = tuple(value)
            lines.append(f"{section}.{name} = {value!r}")
    return "\n".join(lines) + "\n"
