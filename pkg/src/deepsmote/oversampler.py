"""Generate balanced image sets by running SMOTE in the autoencoder's latent space."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import ImageDataset, denormalize, normalize, save_idx_pair
from .errors import ShapeError
from .nn import Network
from .png import export_image_grid
from .smote import LabeledVectors, SmoteConfig, oversample


@dataclass
class LatentBatch:
    codes: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.codes.ndim != 2 or len(self.codes) != len(self.labels):
            raise ShapeError(f"codes {self.codes.shape} do not match {len(self.labels)} labels", "latent")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("latent codes contain non-finite values")


@dataclass
class GenerationPlan:
    """Synthetic images to create per class.

    ``counts=None`` means balance every present class up to the largest one.
    """

    counts: Optional[dict] = None
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.counts is not None:
            self.counts = {int(c): int(n) for c, n in self.counts.items()}
            if any(n < 0 for n in self.counts.values()):
                raise ValueError(f"synthetic counts must be >= 0, got {self.counts}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    def resolve(self, class_counts) -> dict:
        class_counts = np.asarray(class_counts)
        if self.counts is not None:
            return {c: n for c, n in self.counts.items() if n > 0}
        top = int(class_counts.max()) if len(class_counts) else 0
        return {c: top - int(n) for c, n in enumerate(class_counts) if 0 < n < top}


@dataclass
class GenerationResult:
    dataset: ImageDataset
    latent: LatentBatch
    synthetic_codes: LabeledVectors
    plan: dict = field(default_factory=dict)


def encode_dataset(enc: Network, ds: ImageDataset, batch_size=256) -> LatentBatch:
    """Encode raw uint8 images with eval-mode batch norm."""
    x = normalize(ds, size=enc.spec.input_shape[-1])
    return LatentBatch(enc.predict(x, batch_size), ds.labels.copy())


def decode_codes(dec: Network, codes: np.ndarray, out_hw, batch_size=256) -> np.ndarray:
    return denormalize(dec.predict(codes.astype(np.float32), batch_size), out_hw)


def generate(enc: Network, dec: Network, ds: ImageDataset, plan: GenerationPlan) -> GenerationResult:
    """Oversample ``ds`` in latent space; originals come first and are untouched."""
    latent = encode_dataset(enc, ds)
    extra = plan.resolve(ds.counts())
    targets = {c: int(ds.counts()[c]) + n for c, n in extra.items()}
    synth = oversample(LabeledVectors(latent.codes.astype(np.float64), latent.labels), SmoteConfig(targets, plan.k, plan.seed))
    if len(synth) == 0:
        return GenerationResult(ds, latent, synth, extra)
    images = decode_codes(dec, synth.vectors, ds.images.shape[2:])
    if images.shape[1:] != ds.images.shape[1:]:
        raise ShapeError(f"decoder emits {images.shape[1:]}, dataset holds {ds.images.shape[1:]}", "decoder")
    m = len(synth)
    out = ImageDataset(
        np.concatenate([ds.images, images]),
        np.concatenate([ds.labels, synth.labels]),
        ds.class_count,
        ds.split,
        np.concatenate([ds.source_index, np.full(m, -1, dtype=np.int64)]),
        np.concatenate([ds.synthetic, np.ones(m, dtype=bool)]),
    )
    return GenerationResult(out, latent, synth, extra)


def generate_balanced(enc: Network, dec: Network, ds: ImageDataset, plan: GenerationPlan | None = None) -> ImageDataset:
    return generate(enc, dec, ds, plan or GenerationPlan()).dataset


def synthetic_ranges(ds: ImageDataset) -> list:
    """Half-open [start, stop) index runs of synthetic rows."""
    flags = np.concatenate([[False], ds.synthetic, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(flags))
    return [[int(a), int(b)] for a, b in zip(edges[::2], edges[1::2])]


def export_augmented(ds: ImageDataset, directory, prefix="augmented") -> dict:
    """Write an IDX image/label pair plus a JSON sidecar naming the synthetic rows."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "images": directory / f"{prefix}-images-idx3-ubyte",
        "labels": directory / f"{prefix}-labels-idx1-ubyte",
        "sidecar": directory / f"{prefix}.json",
    }
    save_idx_pair(ds, paths["images"], paths["labels"])
    sidecar = {
        "count": len(ds),
        "class_counts": ds.counts().tolist(),
        "synthetic_ranges": synthetic_ranges(ds),
        "synthetic_count": int(ds.synthetic.sum()),
    }
    paths["sidecar"].write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return paths


def export_class_grids(ds: ImageDataset, directory, cols=10, max_rows=10) -> list:
    """One ``class_<id>.png`` per class that received synthetic images."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.synthetic & (ds.labels == c))
        if len(idx) == 0:
            continue
        shown = min(len(idx), cols * max_rows)
        rows = -(-shown // cols)
        width = min(cols, shown)
        tiles = ds.images[idx[:shown]]
        if rows * width > shown:
            pad = np.zeros((rows * width - shown,) + tiles.shape[1:], np.uint8)
            tiles = np.concatenate([tiles, pad])
        written.append(export_image_grid(tiles, rows, width, directory / f"class_{c}.png"))
    return written


__all__ = [
    "GenerationPlan",
    "GenerationResult",
    "LatentBatch",
    "decode_codes",
    "encode_dataset",
    "export_augmented",
    "export_class_grids",
    "export_image_grid",
    "generate",
    "generate_balanced",
    "synthetic_ranges",
]
