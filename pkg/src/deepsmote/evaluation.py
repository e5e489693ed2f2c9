"""Skew-insensitive evaluation: metrics, the baseline classifier, experiments and ratio sweeps."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import ImageDataset, ImbalanceProfile, build_test_sets, make_folds, normalize, ratio_profile, sample_counts
from .errors import ClassSizeError, LabelError, NumericError, ShapeError
from .nn import Network, adam_step, classifier_spec, decoder_spec, encoder_spec, softmax_cross_entropy
from .oversampler import GenerationPlan, generate
from .seeding import derive_seed
from .smote import LabeledVectors, SmoteConfig, balance_targets, oversample
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

METHODS = ("none", "pixel_smote", "deep_smote")
PROTOCOLS = ("balanced", "imbalanced")
CSV_HEADER = ("method", "ratio", "seed", "fold", "protocol", "acsa", "gm", "f1")

# full-scale MNIST DeepSMOTE figures; desk runs are far smaller and cannot match them
PAPER_ANCHORS = {
    "dataset": "MNIST",
    "method": "deep_smote",
    "acsa": 0.9616,
    "gm": 0.9811,
    "f1": 0.9644,
    "reproducible_at_desk_scale": False,
}


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(preds, labels, k: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ShapeError(f"{len(preds)} predictions for {len(labels)} labels")
    for name, v in (("prediction", preds), ("label", labels)):
        if len(v) and (v.min() < 0 or v.max() >= k):
            raise LabelError(f"{name} outside [0, {k})")
    counts = np.bincount(labels * k + preds, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


@dataclass
class MetricsReport:
    acsa: float
    gm: float
    macro_f1: float
    recall: np.ndarray
    precision: np.ndarray
    f1: np.ndarray
    protocol: str = "balanced"

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "acsa": self.acsa,
            "gm": self.gm,
            "macro_f1": self.macro_f1,
            "recall": self.recall.tolist(),
            "precision": self.precision.tolist(),
            "f1": self.f1.tolist(),
        }

    def __eq__(self, other):
        return isinstance(other, MetricsReport) and self.to_dict() == other.to_dict()


def metrics(cm, protocol="balanced") -> MetricsReport:
    """ACSA, GM and macro F1 from a confusion matrix.

    Precision is 0 for a class never predicted, and F1 is 0 when precision
    and recall are both 0. GM is the plain K-th root of the recall product, so
    one missed class drives it to exactly 0.
    """
    c = cm.counts if isinstance(cm, ConfusionMatrix) else ConfusionMatrix(np.asarray(cm)).counts
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    if (rows == 0).any():
        raise ClassSizeError(f"classes {np.flatnonzero(rows == 0).tolist()} have no true instances")
    tp = np.diag(c).astype(np.float64)
    recall = tp / rows
    precision = np.divide(tp, cols, out=np.zeros_like(tp), where=cols > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    k = len(recall)
    gm = float(np.prod(recall) ** (1.0 / k))
    return MetricsReport(float(recall.mean()), gm, float(f1.mean()), recall, precision, f1, protocol)


# ---------------------------------------------------------------- classifier


@dataclass
class ClassifierConfig:
    epochs: int = 15
    batch_size: int = 64
    lr: float = 1e-3
    hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def _classifier_input(ds: ImageDataset) -> np.ndarray:
    side = ds.images.shape[-1]
    return normalize(ds, size=side + (-side) % 4)


def train_classifier(ds: ImageDataset, cfg: ClassifierConfig, progress=None) -> Network:
    """Fit the small CNN with softmax cross-entropy and Adam."""
    x = _classifier_input(ds)
    spec = classifier_spec(ds.class_count, x.shape[1], x.shape[-1], cfg.hidden)
    net = Network.create(spec, np.random.default_rng([cfg.seed, 0]), init="he")
    rng = np.random.default_rng([cfg.seed, 1])
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for b, s in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            logits, cache = net.forward(x[idx], "train")
            loss, g = softmax_cross_entropy(logits, ds.labels[idx])
            if not np.isfinite(loss):
                raise NumericError(f"classifier loss non-finite at epoch {epoch}, batch {b}")
            grads, _ = net.backward(cache, g)
            adam_step(net.params, grads, cfg.lr)
            total += loss * len(idx)
        log.debug("classifier epoch %d loss %.4f", epoch, total / len(x))
        if progress is not None:
            progress(epoch, total / len(x))
    return net


def predict(net: Network, ds: ImageDataset) -> np.ndarray:
    return np.argmax(net.predict(_classifier_input(ds)), axis=1)


def evaluate(net: Network, ds: ImageDataset, protocol: str) -> MetricsReport:
    return metrics(confusion(predict(net, ds), ds.labels, ds.class_count), protocol)


# ---------------------------------------------------------------- oversampling methods


def pixel_smote(ds: ImageDataset, k=5, seed=0) -> ImageDataset:
    """Classic SMOTE on raw pixel vectors, rounded back to uint8."""
    targets = balance_targets(ds.labels, ds.class_count)
    flat = LabeledVectors(ds.images.reshape(len(ds), -1).astype(np.float64), ds.labels)
    synth = oversample(flat, SmoteConfig(targets, k, seed))
    if len(synth) == 0:
        return ds
    images = np.clip(np.rint(synth.vectors), 0, 255).astype(np.uint8).reshape((-1,) + ds.images.shape[1:])
    m = len(synth)
    return ImageDataset(
        np.concatenate([ds.images, images]),
        np.concatenate([ds.labels, synth.labels]),
        ds.class_count,
        ds.split,
        np.concatenate([ds.source_index, np.full(m, -1, dtype=np.int64)]),
        np.concatenate([ds.synthetic, np.ones(m, dtype=bool)]),
    )


def check_separation(train_ds: ImageDataset, test_ds: ImageDataset) -> None:
    """Fail if any training row was drawn from the test data."""
    if train_ds.split == "test":
        raise LabelError("training set is tagged as test data")
    if train_ds.split == test_ds.split:
        real = train_ds.source_index[train_ds.source_index >= 0]
        overlap = np.intersect1d(real, test_ds.source_index)
        if len(overlap):
            raise LabelError(f"{len(overlap)} test images leaked into training")


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentConfig:
    """One run: imbalance injection, oversampling, classifier, both test protocols.

    ``train_pool`` and ``test_pool`` are full splits; the imbalanced training
    set and both test sets are sampled from them with seeds derived from
    ``seed``. ``folds`` switches to stratified k-fold over the imbalanced
    training set, each fold's held-out part is discarded and the fixed test
    sets are reused so that folds stay comparable.
    """

    train_pool: ImageDataset
    test_pool: ImageDataset
    method: str = "none"
    profile: tuple = (400, 200, 100, 75, 50, 35, 20, 10, 6, 4)
    balanced_test: object = 120
    imbalanced_test: tuple = (100, 50, 25, 18, 12, 8, 5, 4, 4, 4)
    seed: int = 0
    ratio: Optional[float] = None
    k: int = 5
    folds: Optional[int] = None
    autoencoder: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        self.profile = tuple(int(c) for c in self.profile)
        if self.ratio is None:
            self.ratio = max(self.profile) / min(self.profile)


@dataclass
class RunRecord:
    method: str
    ratio: float
    seed: int
    fold: int
    protocol: str
    report: MetricsReport

    def row(self) -> list:
        r = self.report
        return [self.method, f"{self.ratio:g}", self.seed, self.fold, self.protocol,
                f"{r.acsa:.10f}", f"{r.gm:.10f}", f"{r.macro_f1:.10f}"]


@dataclass
class ExperimentResult:
    records: list
    metadata: dict
    train_counts: list

    def report(self, protocol="balanced", fold=0) -> MetricsReport:
        for r in self.records:
            if r.protocol == protocol and r.fold == fold:
                return r.report
        raise KeyError((protocol, fold))

    def pair(self, fold=0):
        return self.report("balanced", fold), self.report("imbalanced", fold)


def imbalanced_training_set(pool: ImageDataset, profile, seed: int) -> ImageDataset:
    """The skewed training set used by every method for master seed ``seed``."""
    prof = ImbalanceProfile(tuple(profile), seed=derive_seed(seed, "imbalance"))
    return sample_counts(pool, prof.per_class(), np.random.default_rng(prof.seed))


def autoencoder_seed(seed: int, fold: int = 0) -> int:
    return derive_seed(seed, f"train/{fold}")


def autoencoder_key(part: ImageDataset, ae_cfg: TrainConfig) -> tuple:
    """Cache key: the exact training rows plus the full training config."""
    return (part.split, part.source_index.tobytes(), repr(sorted(ae_cfg.to_dict().items())))


def autoencoder_size(side: int) -> int:
    return side + (-side) % 16  # four stride-2 stages; MNIST 28 pads to 32


def run_experiment(cfg: ExperimentConfig, cache: Optional[dict] = None, progress=None) -> ExperimentResult:
    """Run one method end to end and score it on the balanced and imbalanced test sets.

    ``cache`` (optional, mutated) keeps trained autoencoders keyed by their
    training rows and config, so paired methods or reruns can share them.
    """
    say = progress or (lambda msg: None)
    imbalanced_train = imbalanced_training_set(cfg.train_pool, cfg.profile, cfg.seed)
    balanced_test, imbalanced_test = build_test_sets(
        cfg.test_pool, cfg.balanced_test, cfg.imbalanced_test, derive_seed(cfg.seed, "test")
    )
    if cfg.folds:
        assignment = make_folds(imbalanced_train, cfg.folds, derive_seed(cfg.seed, "folds"))
        parts = [(f, imbalanced_train.subset(assignment.train_index(f))) for f in range(cfg.folds)]
    else:
        parts = [(0, imbalanced_train)]
    records, train_counts = [], []
    for fold, part in parts:
        augmented = _oversample(cfg, part, fold, cache, say)
        for test_ds in (balanced_test, imbalanced_test):
            check_separation(augmented, test_ds)
        train_counts.append(augmented.counts().tolist())
        say(f"{cfg.method} seed {cfg.seed} fold {fold}: classifier on {len(augmented)} images")
        clf_cfg = replace(cfg.classifier, seed=derive_seed(cfg.seed, f"classifier/{fold}"))
        net = train_classifier(augmented, clf_cfg)
        for protocol, test_ds in zip(PROTOCOLS, (balanced_test, imbalanced_test)):
            rep = evaluate(net, test_ds, protocol)
            records.append(RunRecord(cfg.method, cfg.ratio, cfg.seed, fold, protocol, rep))
    metadata = {
        "method": cfg.method,
        "seed": cfg.seed,
        "profile": list(cfg.profile),
        "ratio": cfg.ratio,
        "balanced_test_counts": balanced_test.counts().tolist(),
        "imbalanced_test_counts": imbalanced_test.counts().tolist(),
        "paper_anchors": PAPER_ANCHORS,
    }
    return ExperimentResult(records, metadata, train_counts)


def _oversample(cfg: ExperimentConfig, part: ImageDataset, fold: int, cache, say) -> ImageDataset:
    smote_seed = derive_seed(cfg.seed, f"smote/{fold}")
    if cfg.method == "none":
        return part
    if cfg.method == "pixel_smote":
        return pixel_smote(part, cfg.k, smote_seed)
    ae_cfg = replace(cfg.autoencoder, seed=autoencoder_seed(cfg.seed, fold))
    key = autoencoder_key(part, ae_cfg)
    if cache is not None and key in cache:
        enc, dec = cache[key]
    else:
        say(f"deep_smote seed {cfg.seed} fold {fold}: training autoencoder on {len(part)} images")
        size = autoencoder_size(part.images.shape[-1])
        c = part.images.shape[1]
        result = train(
            encoder_spec(ae_cfg.latent_dim, ae_cfg.channels, c, size),
            decoder_spec(ae_cfg.latent_dim, ae_cfg.channels, c, size),
            part,
            ae_cfg,
        )
        enc, dec = result.encoder, result.decoder
        if cache is not None:
            cache[key] = (enc, dec)
    return generate(enc, dec, part, GenerationPlan(k=cfg.k, seed=smote_seed)).dataset


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    ratios: list
    methods: list
    protocol: str
    records: list
    mean: dict
    spread: dict
    flags: list

    def curve(self, method, metric):
        return [self.mean[(method, r)][metric] for r in self.ratios], [self.spread[(method, r)][metric] for r in self.ratios]


def sweep(base: ExperimentConfig, ratios, methods=("none", "deep_smote"), repetitions=2, protocol="balanced",
          majority=400, cache=None, progress=None) -> SweepResult:
    """Repeat every method at every imbalance ratio.

    Repetition r uses seed ``base.seed + r`` for all methods and ratios, so
    rows are paired across methods. Spread is the sample standard deviation
    (0 when there is a single repetition).
    """
    ratios = [float(r) for r in ratios]
    if not ratios or any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ValueError(f"ratios must be non-empty and strictly increasing, got {ratios}")
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    profiles = {r: ratio_profile(r, majority, base.train_pool.class_count) for r in ratios}
    records = []
    for ratio in ratios:
        for method in methods:
            for rep in range(repetitions):
                cfg = replace(base, method=method, profile=profiles[ratio], ratio=ratio, seed=base.seed + rep, folds=None)
                res = run_experiment(cfg, cache, progress)
                records.extend(r for r in res.records if r.protocol == protocol)
    mean, spread = {}, {}
    for method in methods:
        for ratio in ratios:
            rows = [r.report for r in records if r.method == method and r.ratio == ratio]
            stats = {}
            for name, attr in (("acsa", "acsa"), ("gm", "gm"), ("f1", "macro_f1")):
                v = np.array([getattr(rep, attr) for rep in rows])
                stats[name] = (float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0)
            mean[(method, ratio)] = {k: s[0] for k, s in stats.items()}
            spread[(method, ratio)] = {k: s[1] for k, s in stats.items()}
    flags = trend_flags(mean, ratios, "none") if "none" in methods else []
    for f in flags:
        log.warning("trend check: %s", f)
    return SweepResult(ratios, list(methods), protocol, records, mean, spread, flags)


def trend_flags(mean: dict, ratios, method="none") -> list:
    """Describe every step where a metric rises as the imbalance ratio grows."""
    flags = []
    for metric in ("acsa", "gm", "f1"):
        for a, b in zip(ratios, ratios[1:]):
            lo, hi = mean[(method, a)][metric], mean[(method, b)][metric]
            if hi > lo:
                flags.append(f"{method} {metric} rose from {lo:.4f} at ratio {a:g} to {hi:.4f} at ratio {b:g}")
    return flags


# ---------------------------------------------------------------- serialisation


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def sweep_summary(result: SweepResult) -> dict:
    return {
        "protocol": result.protocol,
        "ratios": result.ratios,
        "methods": result.methods,
        "mean": {f"{m}@{r:g}": result.mean[(m, r)] for m in result.methods for r in result.ratios},
        "spread": {f"{m}@{r:g}": result.spread[(m, r)] for m in result.methods for r in result.ratios},
        "trend_flags": result.flags,
    }
