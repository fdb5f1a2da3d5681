"""Experiment configuration: one YAML file with nested sections covering
preprocessing, the network spec, the training run, the phantom data source,
threshold constants, and service settings."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .nets import NetworkSpec
from .preprocess import PreprocessConfig
from .threshold import ThresholdConfig
from .train import TrainConfig


@dataclass
class DataConfig:
    """Training data source: generated phantoms or a prepared directory."""

    kind: str = "phantom"  # or "directory"
    path: str = ""
    count: int = 40
    lesioned: int = 20
    val_count: int = 10
    shape: tuple[int, int, int] = (8, 32, 32)
    spacing: tuple[float, float, float] = (8.0, 2.0, 2.0)
    fraction_range: tuple[float, float] = (0.05, 0.5)
    noise_sigma: float = 30.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "path": self.path, "count": self.count,
            "lesioned": self.lesioned, "val_count": self.val_count,
            "shape": list(self.shape), "spacing": list(self.spacing),
            "fraction_range": list(self.fraction_range),
            "noise_sigma": self.noise_sigma, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        d = dict(d)
        for key in ("shape", "spacing", "fraction_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ServiceConfig:
    weights: str = ""
    store: str = "store"
    workers: int = 2
    port: int = 8000

    def to_dict(self) -> dict:
        return {"weights": self.weights, "store": self.store,
                "workers": self.workers, "port": self.port}

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceConfig":
        return cls(**d)


@dataclass
class ExperimentConfig:
    target: str = "multitask"  # model role trained by `triage train`
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "preprocess": self.preprocess.to_dict(),
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data.to_dict(),
            "threshold": {
                "hu_min": self.threshold.hu_min, "hu_max": self.threshold.hu_max,
                "sigma": self.threshold.sigma,
                "v_min_fraction": self.threshold.v_min_fraction,
            },
            "service": self.service.to_dict(),
        }


def load_config(path) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    cfg = ExperimentConfig()
    if "target" in raw:
        cfg.target = raw["target"]
    if "preprocess" in raw:
        cfg.preprocess = PreprocessConfig.from_dict(raw["preprocess"])
    if "network" in raw:
        cfg.network = NetworkSpec.from_dict(raw["network"])
    if "train" in raw:
        cfg.train = TrainConfig.from_dict(raw["train"])
    if "data" in raw:
        cfg.data = DataConfig.from_dict(raw["data"])
    if "threshold" in raw:
        cfg.threshold = ThresholdConfig(**raw["threshold"])
    if "service" in raw:
        cfg.service = ServiceConfig.from_dict(raw["service"])
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
