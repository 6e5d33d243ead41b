"""Experiment configuration files: schema validation and typed views."""

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from . import augment, optim
from .errors import ConfigError
from .netgraph import ModelConfig
from .trainer import EarlyStopConfig, ReduceLRConfig, TrainConfig

SCHEMA_VERSION = 1


def load_schema() -> dict:
    return json.loads(resources.files("segmicro").joinpath("experiment.schema.json").read_text())


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def model(self) -> ModelConfig:
        return ModelConfig.from_dict(self.raw["model"])

    def make_optimizer(self) -> optim.OptimizerState:
        section = self.raw.get("optimizer", {"kind": optim.ADAM})
        return optim.make_optimizer(section["kind"], section.get("overrides"))

    @property
    def training(self) -> TrainConfig:
        t = dict(self.raw.get("training", {}))
        t.pop("validation_fraction", None)
        return TrainConfig(
            batch_size=t.get("batch_size", 1),
            max_epochs=t.get("max_epochs", 500),
            early_stop=EarlyStopConfig(**t.get("early_stop", {})),
            reduce_lr=ReduceLRConfig(**t.get("reduce_lr", {})),
            shuffle_seed=self.seed,
            time_budget=t.get("time_budget"),
        )

    @property
    def validation_fraction(self) -> float:
        return float(self.raw.get("training", {}).get("validation_fraction", 0.1))

    @property
    def data(self) -> dict:
        return self.raw.get("data", {})

    def policy(self) -> augment.AugmentPolicy:
        d = dict(self.data.get("policy", {}))
        if "target_size" in self.data:
            d["target_size"] = tuple(self.data["target_size"])
        d["equalize"] = self.data.get("equalize", True)
        return augment.AugmentPolicy.from_dict(d)

    def path(self, key: str):
        value = self.data.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def digest(self) -> str:
        """Content hash of the effective configuration."""
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    # typed constructors catch cross-field rules the schema cannot express
    ModelConfig.from_dict(raw["model"])


def from_dict(raw: dict, base_dir=".", seed: int = None) -> ExperimentConfig:
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = int(seed)
    validate(raw)
    cfg = ExperimentConfig(raw, Path(base_dir))
    cfg.training  # noqa: B018 - validates the training section
    cfg.make_optimizer()
    return cfg


def load(path, seed: int = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(raw, path.parent, seed)
