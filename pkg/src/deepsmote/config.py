"""JSON run configuration, validated with pydantic and reported by field path."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .data import MNIST_IMBALANCED_TEST, MNIST_TRAIN_PROFILE, scaled_profile
from .errors import ConfigError
from .evaluation import ClassifierConfig, METHODS
from .trainer import TrainConfig

DESK_PROFILE = scaled_profile(MNIST_TRAIN_PROFILE)  # (400, 200, 100, 75, 50, 35, 20, 10, 6, 4)
DESK_BALANCED_TEST = 120
DESK_IMBALANCED_TEST = scaled_profile(MNIST_IMBALANCED_TEST)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    train_images: Path
    train_labels: Path
    test_images: Path
    test_labels: Path
    class_count: int = Field(10, ge=2)

    @field_validator("train_images", "train_labels", "test_images", "test_labels")
    @classmethod
    def _exists(cls, v: Path) -> Path:
        if not v.is_file():
            raise ValueError(f"file not found: {v}")
        return v


class ImbalanceSection(_Section):
    profile: Optional[list[int]] = None
    ratio: Optional[float] = Field(None, ge=1)
    majority: int = Field(400, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if self.profile is not None and self.ratio is not None:
            raise ValueError("give either profile or ratio, not both")
        if self.profile is not None and any(c < 1 for c in self.profile):
            raise ValueError("profile counts must be >= 1")
        return self


class AutoencoderSection(_Section):
    latent_dim: int = Field(300, ge=1)
    lr: float = Field(0.0002, gt=0)
    batch_size: int = Field(100, ge=2)
    epochs: int = Field(100, ge=1)
    penalty_weight: float = Field(1.0, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    channels: list[int] = Field(default_factory=lambda: [64, 64, 64, 64], min_length=4, max_length=4)
    permutation: Literal["shift", "random", "identity"] = "shift"
    plateau_patience: int = Field(10, ge=1)
    plateau_tol: float = Field(1e-4, ge=0)


class GenerationSection(_Section):
    k: int = Field(5, ge=1)
    counts: Optional[dict[int, int]] = None


class ClassifierSection(_Section):
    epochs: int = Field(15, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    hidden: int = Field(64, ge=1)


class EvaluationSection(_Section):
    methods: Optional[list[Literal["none", "pixel_smote", "deep_smote"]]] = None
    balanced_test: Union[int, list[int]] = DESK_BALANCED_TEST
    imbalanced_test: list[int] = Field(default_factory=lambda: list(DESK_IMBALANCED_TEST))
    folds: Optional[int] = Field(None, ge=2)


class SweepSection(_Section):
    ratios: list[float] = Field(default_factory=lambda: [20.0, 100.0, 400.0], min_length=1)
    methods: list[Literal["none", "pixel_smote", "deep_smote"]] = Field(default_factory=lambda: ["none", "deep_smote"])
    repetitions: int = Field(5, ge=1)
    protocol: Literal["balanced", "imbalanced"] = "balanced"

    @field_validator("ratios")
    @classmethod
    def _increasing(cls, v):
        if any(r < 1 for r in v):
            raise ValueError("ratios must be >= 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("ratios must be strictly increasing")
        return v


class RunConfig(_Section):
    seed: int = Field(ge=0, lt=2**64)
    data: DataSection
    method: Literal["none", "pixel_smote", "deep_smote"] = "deep_smote"
    imbalance: ImbalanceSection = Field(default_factory=ImbalanceSection)
    autoencoder: AutoencoderSection = Field(default_factory=AutoencoderSection)
    generation: GenerationSection = Field(default_factory=GenerationSection)
    classifier: ClassifierSection = Field(default_factory=ClassifierSection)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    out: Optional[Path] = None

    # ---- conversions to the library's own config objects

    def profile(self) -> tuple:
        from .data import ratio_profile

        if self.imbalance.ratio is not None:
            return ratio_profile(self.imbalance.ratio, self.imbalance.majority, self.data.class_count)
        counts = tuple(self.imbalance.profile) if self.imbalance.profile is not None else DESK_PROFILE
        if len(counts) != self.data.class_count:
            raise ConfigError(f"{len(counts)} counts for {self.data.class_count} classes", "imbalance.profile")
        return counts

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.autoencoder.model_dump())

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig(**self.classifier.model_dump())

    def methods(self) -> list:
        return list(self.evaluation.methods or [self.method])

    def to_json_dict(self) -> dict:
        return json.loads(self.model_dump_json())


assert set(METHODS) == {"none", "pixel_smote", "deep_smote"}


def _field_path(loc) -> str:
    return ".".join(str(p) for p in loc if not (isinstance(p, str) and p.startswith("function-")))


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping; the first problem is raised as ConfigError with its dotted path."""
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("a seed is required (set it in the config or pass --seed)", "seed")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        msg = err["msg"].removeprefix("Value error, ")
        raise ConfigError(msg, _field_path(err["loc"]) or "config") from None


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read a JSON config, apply flag ``overrides`` (which win), and validate.

    Relative data paths resolve against the config file's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "--config") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", "config")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    data = raw.get("data")
    if isinstance(data, dict):
        for k, v in list(data.items()):
            if k.endswith(("_images", "_labels")) and isinstance(v, str) and not Path(v).is_absolute():
                data[k] = str(path.parent / v)
    return parse_config(raw)
