"""Encoder/decoder training with a reconstruction loss and a permutation penalty.

Each optimiser step combines two terms:

* reconstruction: a shuffled mixed-class batch is encoded, decoded and scored
  against itself with MSE;
* penalty: a batch drawn from a single class is encoded, the codes are
  rotated by one position, decoded, and each decoding is scored against the
  image whose *neighbour* produced it.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ImageDataset, normalize
from .errors import LabelError, NumericError
from .nn import Network, NetworkSpec, adam_step, decoder_spec, encoder_spec, mse_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    latent_dim: int = 300
    lr: float = 0.0002
    batch_size: int = 100
    epochs: int = 100
    penalty_weight: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    channels: tuple = (64, 64, 64, 64)
    permutation: str = "shift"  # or "random"
    plateau_patience: int = 10
    plateau_tol: float = 1e-4

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2: the penalty pairs items within a class batch")
        if self.latent_dim < 1 or self.epochs < 1:
            raise ValueError("latent_dim and epochs must be positive")
        if self.penalty_weight < 0:
            raise ValueError("penalty_weight must be non-negative")
        if self.permutation not in ("shift", "random", "identity"):
            raise ValueError(f"unknown permutation {self.permutation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class LossRecord:
    epoch: int
    reconstruction: float
    penalty: float
    total: float


@dataclass
class TrainResult:
    encoder: Network
    decoder: Network
    history: list = field(default_factory=list)
    batch_totals: list = field(default_factory=list)
    penalty_classes: list = field(default_factory=list)
    stopped_early: bool = False


def _add(a: dict, b: dict, scale=1.0) -> dict:
    return {k: a[k] + scale * b[k] for k in a}


def reconstruction_step(enc: Network, dec: Network, batch: np.ndarray):
    """MSE between ``dec(enc(batch))`` and ``batch``; returns ``(loss, (enc_grads, dec_grads))``."""
    z, c_enc = enc.forward(batch, "train")
    out, c_dec = dec.forward(z, "train")
    loss, g = mse_loss(out, batch)
    g_dec, g_z = dec.backward(c_dec, g)
    g_enc, _ = enc.backward(c_enc, g_z)
    return loss, (g_enc, g_dec)


def permutation_for(n: int, how="shift", rng=None) -> np.ndarray:
    """Index map ``perm`` such that image i is decoded from code ``perm[i]``."""
    if how == "shift":
        return (np.arange(n) + 1) % n
    if how == "identity":
        return np.arange(n)
    return rng.permutation(n)


def penalty_step(enc: Network, dec: Network, class_batch: np.ndarray, labels=None, permutation="shift", rng=None):
    """Decode each image's same-class peer code and score it against the image.

    With the default circular shift, image i is compared with the decoding of
    code i+1 (wrapping), i.e. D0 vs decode(E1), D1 vs decode(E2), ...
    """
    if labels is not None and len(np.unique(labels)) > 1:
        raise LabelError("penalty batch must come from a single class")
    n = len(class_batch)
    if n < 2:
        raise ValueError("penalty batch needs at least 2 images")
    perm = permutation_for(n, permutation, rng)
    z, c_enc = enc.forward(class_batch, "train")
    out, c_dec = dec.forward(z[perm], "train")
    loss, g = mse_loss(out, class_batch)
    g_dec, g_zp = dec.backward(c_dec, g)
    g_z = np.zeros_like(z)
    np.add.at(g_z, perm, g_zp)
    g_enc, _ = enc.backward(c_enc, g_z)
    return loss, (g_enc, g_dec)


def build_networks(cfg: TrainConfig, in_channels=1, size=32):
    rng = np.random.default_rng([cfg.seed, 0])
    enc = Network.create(encoder_spec(cfg.latent_dim, cfg.channels, in_channels, size), rng)
    dec = Network.create(decoder_spec(cfg.latent_dim, cfg.channels, in_channels, size), rng)
    return enc, dec


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    for s in starts:
        idx = order[s:s + batch_size]
        if len(idx) >= 2:
            yield idx


def fit(enc: Network, dec: Network, x: np.ndarray, labels: np.ndarray, cfg: TrainConfig, progress=None) -> TrainResult:
    """Train ``enc``/``dec`` in place on normalised images ``x`` (N, C, H, W)."""
    rng = np.random.default_rng([cfg.seed, 1])
    labels = np.asarray(labels)
    classes = np.unique(labels)
    members = {int(c): np.flatnonzero(labels == c) for c in classes}
    result = TrainResult(enc, dec)
    stall = 0
    for epoch in range(1, cfg.epochs + 1):
        rec_sum = pen_sum = tot_sum = 0.0
        nb = 0
        for b, idx in enumerate(_batches(len(x), cfg.batch_size, rng)):
            rec, grads = reconstruction_step(enc, dec, x[idx])
            pen = 0.0
            if cfg.penalty_weight > 0:
                c = int(classes[rng.integers(len(classes))])
                pool = members[c]
                pick = rng.choice(pool, size=len(idx), replace=len(pool) < len(idx))
                result.penalty_classes.append(c)
                pen, pgrads = penalty_step(enc, dec, x[pick], permutation=cfg.permutation, rng=rng)
                grads = (_add(grads[0], pgrads[0], cfg.penalty_weight), _add(grads[1], pgrads[1], cfg.penalty_weight))
            total = rec + cfg.penalty_weight * pen
            if not np.isfinite(total):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_step(enc.params, grads[0], cfg.lr, cfg.beta1, cfg.beta2)
            adam_step(dec.params, grads[1], cfg.lr, cfg.beta1, cfg.beta2)
            result.batch_totals.append((rec, pen, total))
            rec_sum += rec
            pen_sum += pen
            tot_sum += total
            nb += 1
        record = LossRecord(epoch, rec_sum / nb, pen_sum / nb, tot_sum / nb)
        if result.history:
            prev = result.history[-1].total
            improvement = (prev - record.total) / prev if prev > 0 else 0.0
            stall = stall + 1 if improvement < cfg.plateau_tol else 0
        result.history.append(record)
        log.info("epoch %d recon %.5f penalty %.5f total %.5f", epoch, record.reconstruction, record.penalty, record.total)
        if progress is not None:
            progress(record)
        if stall >= cfg.plateau_patience:
            result.stopped_early = True
            log.info("loss plateaued after %d epochs", epoch)
            break
    return result


def train(enc_spec: NetworkSpec, dec_spec: NetworkSpec, ds: ImageDataset, cfg: TrainConfig, progress=None) -> TrainResult:
    """Initialise both networks from ``cfg.seed`` and train them on ``ds``.

    ``ds`` holds raw uint8 images; they are scaled to [-1, 1] and padded to
    the encoder's input size here.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    enc = Network.create(enc_spec, rng)
    dec = Network.create(dec_spec, rng)
    x = normalize(ds, size=enc_spec.input_shape[-1])
    return fit(enc, dec, x, ds.labels, cfg, progress)
