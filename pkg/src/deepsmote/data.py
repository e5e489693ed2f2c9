"""Image datasets: IDX I/O, imbalance injection, test-set construction, folds, scaling."""
from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ClassSizeError, IdxParseError, InfeasibleError, LabelError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# per-class counts for MNIST / Fashion-MNIST, class 0 first
MNIST_TRAIN_PROFILE = (4000, 2000, 1000, 750, 500, 350, 200, 100, 60, 40)
MNIST_BALANCED_TEST = (1200,) * 10
MNIST_IMBALANCED_TEST = (1000, 500, 250, 187, 125, 87, 50, 25, 15, 10)


@dataclass
class ImageDataset:
    """Labelled uint8 images of shape (N, C, H, W).

    ``split`` and ``source_index`` record where every row came from
    (``source_index`` is -1 for synthetic rows) so train/test separation can
    be checked after any amount of resampling.
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "unknown"
    source_index: Optional[np.ndarray] = None
    synthetic: Optional[np.ndarray] = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] not in (1, 3):
            raise ValueError(f"images must be (N, C, H, W) with C in {{1, 3}}, got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise LabelError(f"labels must lie in [0, {self.class_count})")
        if self.source_index is None:
            self.source_index = np.arange(len(self.labels), dtype=np.int64)
        if self.synthetic is None:
            self.synthetic = np.zeros(len(self.labels), dtype=bool)

    def __len__(self):
        return len(self.labels)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def subset(self, index) -> "ImageDataset":
        index = np.asarray(index, dtype=np.int64)
        return ImageDataset(
            self.images[index],
            self.labels[index],
            self.class_count,
            self.split,
            self.source_index[index],
            self.synthetic[index],
        )


# ---------------------------------------------------------------- IDX


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Read an unsigned-byte IDX file whose magic must equal ``expected_magic``."""
    with _open(path) as f:
        data = f.read()
    if len(data) < 4:
        raise IdxParseError("file too short for magic number", path, 0)
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != expected_magic:
        raise IdxParseError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", path, 0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxParseError(f"header needs {header} bytes, file has {len(data)}", path, len(data))
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(data) < header + size:
        raise IdxParseError(f"payload truncated: need {size} bytes, have {len(data) - header}", path, len(data))
    if len(data) > header + size:
        raise IdxParseError(f"{len(data) - header - size} trailing bytes", path, header + size)
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(payload)
    else:
        path.write_bytes(payload)


def load_idx(images_path, labels_path, split="train", class_count=None) -> ImageDataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if len(images) != len(labels):
        raise IdxParseError(f"label count {len(labels)} does not match image count {len(images)}", labels_path, 4)
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 1
    return ImageDataset(images[:, None, :, :].copy(), labels.astype(np.int64), class_count, split)


def save_idx_pair(ds: ImageDataset, images_path, labels_path) -> None:
    if ds.images.shape[1] != 1:
        raise ValueError("IDX export supports single-channel images only")
    write_idx(images_path, ds.images[:, 0])
    write_idx(labels_path, ds.labels.astype(np.uint8))


# ---------------------------------------------------------------- profiles and sampling


@dataclass
class ImbalanceProfile:
    """Per-class counts to retain. ``counts[i]`` applies to class
    ``class_permutation[i]`` (identity when not given)."""

    counts: tuple
    seed: int = 0
    class_permutation: Optional[tuple] = None

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        if self.class_permutation is not None:
            self.class_permutation = tuple(int(c) for c in self.class_permutation)
            if sorted(self.class_permutation) != list(range(len(self.counts))):
                raise ValueError("class_permutation must be a permutation of range(len(counts))")
        if any(c < 1 for c in self.counts):
            raise InfeasibleError(f"every profile count must be >= 1, got {self.counts}")

    def per_class(self) -> np.ndarray:
        out = np.zeros(len(self.counts), dtype=np.int64)
        perm = self.class_permutation or range(len(self.counts))
        for count, cls in zip(self.counts, perm):
            out[cls] = count
        return out

    @property
    def ratio(self) -> float:
        return max(self.counts) / min(self.counts)

    def to_dict(self) -> dict:
        d = {"counts": list(self.counts), "seed": self.seed}
        if self.class_permutation is not None:
            d["class_permutation"] = list(self.class_permutation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImbalanceProfile":
        return cls(tuple(d["counts"]), d.get("seed", 0), d.get("class_permutation"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text) -> "ImbalanceProfile":
        return cls.from_dict(json.loads(text))


def scaled_profile(counts=MNIST_TRAIN_PROFILE, divisor=10, minimum=4) -> tuple:
    """Shrink a profile by ``divisor`` (floor), never below ``minimum``."""
    return tuple(max(minimum, int(c) // divisor) for c in counts)


def ratio_profile(ratio: float, majority=400, classes=10) -> tuple:
    """Geometric ladder from ``majority`` down to ``majority / ratio``."""
    if ratio < 1:
        raise InfeasibleError(f"imbalance ratio must be >= 1, got {ratio}")
    if classes == 1:
        return (majority,)
    counts = tuple(max(1, int(np.floor(majority * ratio ** (-c / (classes - 1)) + 0.5))) for c in range(classes))
    return counts


def sample_counts(ds: ImageDataset, per_class, rng: np.random.Generator) -> ImageDataset:
    """Draw ``per_class[c]`` rows of every class without replacement, then shuffle."""
    per_class = np.asarray(per_class, dtype=np.int64)
    if len(per_class) != ds.class_count:
        raise InfeasibleError(f"expected {ds.class_count} per-class counts, got {len(per_class)}")
    available = ds.counts()
    picks = []
    for c in range(ds.class_count):
        want = int(per_class[c])
        if want < 0 or want > available[c]:
            raise InfeasibleError(f"class {c}: requested {want}, only {available[c]} available")
        members = np.flatnonzero(ds.labels == c)
        picks.append(rng.choice(members, size=want, replace=False))
    index = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
    return ds.subset(index[rng.permutation(len(index))])


def apply_imbalance(ds: ImageDataset, profile: ImbalanceProfile) -> ImageDataset:
    return sample_counts(ds, profile.per_class(), np.random.default_rng(profile.seed))


def build_test_sets(ds_test: ImageDataset, balanced_counts, imbalanced_counts, seed=0):
    """Independently sample a balanced and an imbalanced test set."""
    if np.ndim(balanced_counts) == 0:
        balanced_counts = [int(balanced_counts)] * ds_test.class_count
    balanced = sample_counts(ds_test, balanced_counts, np.random.default_rng([seed, 0]))
    imbalanced = sample_counts(ds_test, imbalanced_counts, np.random.default_rng([seed, 1]))
    return balanced, imbalanced


@dataclass
class FoldAssignment:
    folds: np.ndarray
    k: int

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds != fold)

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)

    def to_dict(self) -> dict:
        return {"k": self.k, "folds": self.folds.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FoldAssignment":
        return cls(np.asarray(d["folds"], dtype=np.int64), int(d["k"]))


def make_folds(ds: ImageDataset, k: int, seed: int = 0) -> FoldAssignment:
    """Stratified k-fold assignment: within each class, fold sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    counts = ds.counts()
    for c, n in enumerate(counts):
        if 0 < n < k:
            raise ClassSizeError(f"class {c} has {n} members, fewer than {k} folds")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(ds), dtype=np.int64)
    offset = 0
    for c in range(ds.class_count):
        members = np.flatnonzero(ds.labels == c)
        members = members[rng.permutation(len(members))]
        # rotate the starting fold so remainders spread across folds
        folds[members] = (np.arange(len(members)) + offset) % k
        offset = (offset + len(members)) % k
    return FoldAssignment(folds, k)


# ---------------------------------------------------------------- scaling


def normalize(ds: ImageDataset, size=32) -> np.ndarray:
    """Map pixels to [-1, 1] (float32) and pad with -1 to ``size`` x ``size``."""
    x = ds.images.astype(np.float32) * np.float32(2.0 / 255.0) - np.float32(1.0)
    h, w = x.shape[2:]
    if h > size or w > size:
        raise ValueError(f"images {h}x{w} larger than target {size}x{size}")
    top, left = (size - h) // 2, (size - w) // 2
    return np.pad(x, ((0, 0), (0, 0), (top, size - h - top), (left, size - w - left)), constant_values=-1.0)


def denormalize(x: np.ndarray, out_hw=(28, 28)) -> np.ndarray:
    """Inverse of :func:`normalize`: centre-crop, clip to [-1, 1], round to uint8."""
    h, w = x.shape[2:]
    oh, ow = out_hw
    top, left = (h - oh) // 2, (w - ow) // 2
    x = np.clip(x[:, :, top:top + oh, left:left + ow], -1.0, 1.0)
    return np.rint((x.astype(np.float64) + 1.0) * 127.5).astype(np.uint8)
