"""Exact SMOTE over real vector spaces.

Neighbours are found by brute force within each class (Euclidean distance,
ties broken by the lower index) and synthetic points are drawn on the segment
between a member and one of its neighbours.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ClassSizeError, InfeasibleError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class LabeledVectors:
    """``vectors`` is an (N, D) matrix and ``labels`` holds N class ids.

    ``origin`` is only set on synthetic output: an (N, 2) array of the parent
    and neighbour row indices in the source data each row was drawn between,
    and ``weights`` the interpolation fraction used.
    """

    vectors: np.ndarray
    labels: np.ndarray
    origin: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise ShapeError(f"vectors must be (N, D) with D >= 1, got {self.vectors.shape}")
        if self.labels.shape != (self.vectors.shape[0],):
            raise ShapeError(f"{self.vectors.shape[0]} vectors but {self.labels.shape} labels")
        if (self.labels < 0).any():
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("vectors must be finite")

    def __len__(self):
        return len(self.labels)

    def counts(self, num_classes=None) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes or 0)


@dataclass
class SmoteConfig:
    targets: dict = field(default_factory=dict)  # class id -> desired total count
    k: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def _pairwise_sq(x: np.ndarray, chunk=256) -> np.ndarray:
    # direct differences rather than the |a|^2+|b|^2-2ab expansion, which loses exact ties
    n = len(x)
    x = x.astype(np.float64, copy=False)
    out = np.empty((n, n))
    for i in range(0, n, chunk):
        d = x[i:i + chunk, None, :] - x[None, :, :]
        out[i:i + chunk] = np.einsum("ijk,ijk->ij", d, d)
    return out


def knn_within_class(data: LabeledVectors, class_id: int, k: int):
    """Return ``(members, neighbors)`` for one class.

    ``members`` holds the row indices of the class in ascending order;
    ``neighbors[r]`` lists the row indices of the ``min(k, n - 1)`` nearest
    other members of ``members[r]``, nearest first.
    """
    members = np.flatnonzero(data.labels == class_id)
    if len(members) < 2:
        raise ClassSizeError(f"class {class_id} has {len(members)} member(s); need at least 2 for neighbours")
    kk = min(k, len(members) - 1)
    d = _pairwise_sq(data.vectors[members])
    np.fill_diagonal(d, np.inf)
    # stable sort keeps lower column index first among equal distances
    order = np.argsort(d, axis=1, kind="stable")[:, :kk]
    return members, members[order]


def interpolate(x, neighbor, u):
    """``x + u * (neighbor - x)`` for ``u`` in [0, 1]."""
    x = np.asarray(x)
    neighbor = np.asarray(neighbor)
    if x.shape != neighbor.shape:
        raise ShapeError(f"cannot interpolate between shapes {x.shape} and {neighbor.shape}")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    return x + u * (neighbor - x)


def class_rng(seed: int, class_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(class_id)])


def oversample(data: LabeledVectors, cfg: SmoteConfig) -> LabeledVectors:
    """Draw ``targets[c] - count(c)`` synthetic vectors for every class in ``cfg.targets``.

    Each synthetic vector picks a member uniformly, one of its k neighbours
    uniformly, and a fraction u ~ U[0, 1). Classes with a single member are
    filled with copies of it. Each class uses its own RNG stream derived from
    ``cfg.seed``, so results do not depend on which other classes are present.
    """
    counts = np.bincount(data.labels, minlength=max(cfg.targets, default=-1) + 1)
    dim = data.vectors.shape[1]
    out_vec, out_lab, out_origin, out_w = [], [], [], []
    for c in sorted(cfg.targets):
        have = int(counts[c])
        need = int(cfg.targets[c]) - have
        if need < 0:
            raise InfeasibleError(f"class {c}: target {cfg.targets[c]} is below current count {have}")
        if need == 0:
            continue
        if have == 0:
            raise ClassSizeError(f"class {c} has no members to synthesise from")
        rng = class_rng(cfg.seed, c)
        if have == 1:
            lone = int(np.flatnonzero(data.labels == c)[0])
            log.warning("class %d has a single member; replicating it %d times", c, need)
            out_vec.append(np.repeat(data.vectors[lone][None], need, axis=0))
            out_origin.append(np.full((need, 2), lone))
            out_w.append(np.zeros(need))
        else:
            members, nbrs = knn_within_class(data, c, cfg.k)
            rows = rng.integers(0, len(members), size=need)
            picks = rng.integers(0, nbrs.shape[1], size=need)
            u = rng.random(need)
            parents = members[rows]
            partners = nbrs[rows, picks]
            x = data.vectors[parents]
            n = data.vectors[partners]
            out_vec.append(x + u[:, None].astype(x.dtype) * (n - x))
            out_origin.append(np.stack([parents, partners], axis=1))
            out_w.append(u)
        out_lab.append(np.full(need, c, dtype=np.int64))
    if not out_vec:
        return LabeledVectors(
            np.zeros((0, dim), dtype=data.vectors.dtype),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, 2), dtype=np.int64),
            np.zeros(0),
        )
    return LabeledVectors(
        np.concatenate(out_vec),
        np.concatenate(out_lab),
        np.concatenate(out_origin).astype(np.int64),
        np.concatenate(out_w),
    )


def balance_targets(labels, num_classes=None) -> dict:
    """Targets that lift every present class to the largest class count."""
    counts = np.bincount(np.asarray(labels), minlength=num_classes or 0)
    top = int(counts.max()) if counts.size else 0
    return {c: top for c in range(len(counts)) if counts[c] > 0}
