"""Experiment configuration: one YAML file describing dataset, networks,
training and evaluation, round-trippable so runs can archive their config.

Schema (all sections optional except `dataset`, all keys validated):

    output_dir: runs/demo
    dataset:
      synth: {subject_count: 4, impressions_per_subject: 4, ...}
      # or: manifest: path/to/manifest.json
    networks:
      generator: {residual_blocks: 7, feature_maps: 64, upsample_stages: 1}
      discriminator: {base_width: 64, dense_units: 1024, input_hw: [80, 60]}
      verifier: {base_width: 64, embedding_dim: 128}
      pore_detector: {residual_blocks: 8, base_width: 16, width_cap_factor: 8}
      extractor: {seed: 2024, stage_widths: [[64, 64], ...], default_layer: relu2_2}
    train: {batch_size: 64, sr_lr: 1.0e-4, loss_weights: {mse: 1.0e-3, ...}, ...}
    eval: {threshold: 0.5, nms_radius: 2.0, match_radius: null}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .losses import LossWeights
from .networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    PerceptualExtractorSpec,
    PoreDetectorSpec,
    VerifierSpec,
)
from .synthgen import SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration content; maps to the usage-error exit code."""


@dataclass
class DatasetConfig:
    manifest: Optional[str] = None
    synth: Optional[SynthConfig] = None
    # HR patch geometry used to cut training samples from the images
    patch_h: int = 80
    patch_w: int = 60
    patch_stride: int = 40

    def __post_init__(self):
        if (self.manifest is None) == (self.synth is None):
            raise ConfigError(
                "dataset needs exactly one of 'manifest' or 'synth'"
            )
        for name in ("patch_h", "patch_w", "patch_stride"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.patch_h % 2 or self.patch_w % 2:
            raise ConfigError("patch_h and patch_w must be even (2x degradation)")
        if self.patch_h < 16 or self.patch_w < 16:
            raise ConfigError("patches must be at least 16x16")


@dataclass
class NetworkConfig:
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    verifier: VerifierSpec = field(default_factory=VerifierSpec)
    pore_detector: PoreDetectorSpec = field(default_factory=PoreDetectorSpec)
    extractor: PerceptualExtractorSpec = field(
        default_factory=PerceptualExtractorSpec
    )


@dataclass
class EvalConfig:
    threshold: float = 0.5
    nms_radius: float = 2.0
    match_radius: Optional[float] = None  # None: scaled from the dataset ppi
    conditions: tuple = ("hr", "sr")
    corr_max_shift: int = 16
    sweep_thresholds: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

    def __post_init__(self):
        self.conditions = tuple(self.conditions)
        self.sweep_thresholds = tuple(float(t) for t in self.sweep_thresholds)
        bad = [c for c in self.conditions if c not in ("hr", "sr", "lr")]
        if bad:
            raise ConfigError(f"unknown eval condition(s) {bad}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.nms_radius <= 0:
            raise ConfigError(f"nms_radius must be positive, got {self.nms_radius}")
        if self.corr_max_shift < 1:
            raise ConfigError("corr_max_shift must be >= 1")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    output_dir: str = "poresr-run"
    networks: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


# ---------------------------------------------------------------------------
# dict <-> dataclass plumbing


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_as_tuple(v) for v in value)
    return value


def _join(path, key):
    return f"{path}.{key}" if path else key


def _build(cls, mapping, path, nested=None, tuple_fields=()):
    """Instantiate a dataclass from a mapping, rejecting unknown keys by name."""
    nested = nested or {}
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"config section '{path}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{_join(path, key)}'")
        if key in nested:
            kwargs[key] = nested[key](value, _join(path, key))
        elif key in tuple_fields and value is not None:
            kwargs[key] = _as_tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{path}' section: {exc}") from exc


def _build_dataset(mapping, path):
    return _build(
        DatasetConfig, mapping, path,
        nested={"synth": lambda m, p: _build(SynthConfig, m, p)},
    )


def _build_networks(mapping, path):
    return _build(
        NetworkConfig, mapping, path,
        nested={
            "generator": lambda m, p: _build(GeneratorSpec, m, p),
            "discriminator": lambda m, p: _build(
                DiscriminatorSpec, m, p, tuple_fields=("input_hw",)
            ),
            "verifier": lambda m, p: _build(VerifierSpec, m, p),
            "pore_detector": lambda m, p: _build(PoreDetectorSpec, m, p),
            "extractor": lambda m, p: _build(
                PerceptualExtractorSpec, m, p, tuple_fields=("stage_widths",)
            ),
        },
    )


def _build_train(mapping, path):
    return _build(
        TrainConfig, mapping, path,
        nested={"loss_weights": lambda m, p: _build(LossWeights, m, p)},
        tuple_fields=("ridge_layers",),
    )


def _build_eval(mapping, path):
    return _build(
        EvalConfig, mapping, path,
        tuple_fields=("conditions", "sweep_thresholds"),
    )


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    if "dataset" not in data:
        raise ConfigError("config needs a 'dataset' section")
    return _build(
        ExperimentConfig, data, "",
        nested={
            "dataset": lambda m, p: _build_dataset(m, p),
            "networks": lambda m, p: _build_networks(m, p),
            "train": lambda m, p: _build_train(m, p),
            "eval": lambda m, p: _build_eval(m, p),
        },
    )


def config_to_dict(cfg: ExperimentConfig) -> dict:
    data = dataclasses.asdict(cfg)
    if cfg.dataset.synth is None:
        data["dataset"].pop("synth")
    else:
        data["dataset"].pop("manifest")
    return data


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(cfg), sort_keys=True), encoding="utf-8"
    )
