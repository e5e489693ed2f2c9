"""Latent-space SMOTE oversampling for imbalanced image classification."""
from .data import ImageDataset, ImbalanceProfile, load_idx
from .evaluation import ExperimentConfig, metrics, run_experiment, sweep
from .oversampler import GenerationPlan, generate_balanced
from .smote import LabeledVectors, SmoteConfig, oversample
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "GenerationPlan",
    "ImageDataset",
    "ImbalanceProfile",
    "LabeledVectors",
    "SmoteConfig",
    "TrainConfig",
    "generate_balanced",
    "load_idx",
    "metrics",
    "oversample",
    "run_experiment",
    "sweep",
    "train",
]
