"""Batch runner: ``deepsmote {train,generate,evaluate,sweep} --config C --seed S --out DIR``.

Output layout under ``--out``::

    checkpoints/   encoder.dsmw, decoder.dsmw
    reports/       loss_history.csv, metrics.csv/json, sweep.csv/json
    images/        class_<id>.png, sweep_<metric>_<protocol>.png
    augmented/     augmented-{images,labels}-idx*-ubyte, augmented.json
    manifest.json

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .data import ImageDataset, load_idx
from .errors import ClassSizeError, ConfigError, IdxParseError, InfeasibleError, LabelError, NumericError
from .evaluation import (
    PAPER_ANCHORS,
    ExperimentConfig,
    autoencoder_key,
    autoencoder_seed,
    autoencoder_size,
    imbalanced_training_set,
    records_csv,
    run_experiment,
    sweep,
    sweep_summary,
)
from .nn import Network, decoder_spec, encoder_spec, init_params, load_params, save_params
from .oversampler import GenerationPlan, export_augmented, export_class_grids, generate
from .png import PALETTE, line_plot, write_png
from .seeding import derive_seed

log = logging.getLogger("deepsmote")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DATA_ERRORS = (IdxParseError, InfeasibleError, ClassSizeError, LabelError)


# ---------------------------------------------------------------- output directory


class OutputDir:
    """Fixed artifact layout plus a lockfile so only one run writes at a time."""

    def __init__(self, root):
        self.root = Path(root)
        self.checkpoints = self.root / "checkpoints"
        self.reports = self.root / "reports"
        self.images = self.root / "images"
        self.augmented = self.root / "augmented"
        self.manifest = self.root / "manifest.json"
        self.lock = self.root / ".lock"

    @contextlib.contextmanager
    def locked(self):
        self.root.mkdir(parents=True, exist_ok=True)
        for d in (self.checkpoints, self.reports, self.images):
            d.mkdir(exist_ok=True)
        try:
            fd = os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"{self.root} is locked by another run (delete {self.lock.name} if stale)", "--out") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield self
        finally:
            self.lock.unlink(missing_ok=True)

    def relative(self, path) -> str:
        return Path(path).relative_to(self.root).as_posix()


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def update_manifest(out: OutputDir, cfg: RunConfig, command: str, files, extra=None) -> None:
    """Merge this command's record into manifest.json. No timestamps, so reruns are byte-identical."""
    manifest = json.loads(out.manifest.read_text()) if out.manifest.exists() else {}
    manifest.update({
        "seed": cfg.seed,
        "latent_dim": cfg.autoencoder.latent_dim,
        "lr": cfg.autoencoder.lr,
        "config": cfg.to_json_dict(),
    })
    record = {"files": {out.relative(f): _sha256(f) for f in sorted(files)}}
    record.update(extra or {})
    manifest.setdefault("commands", {})[command] = record
    _write_json(out.manifest, manifest)


# ---------------------------------------------------------------- shared steps


def load_pools(cfg: RunConfig):
    d = cfg.data
    train_pool = load_idx(d.train_images, d.train_labels, "train", d.class_count)
    test_pool = load_idx(d.test_images, d.test_labels, "test", d.class_count)
    return train_pool, test_pool


def training_set(cfg: RunConfig, train_pool: ImageDataset) -> ImageDataset:
    return imbalanced_training_set(train_pool, cfg.profile(), cfg.seed)


def _specs(cfg: RunConfig, ds: ImageDataset):
    a = cfg.autoencoder
    size = autoencoder_size(ds.images.shape[-1])
    c = ds.images.shape[1]
    return encoder_spec(a.latent_dim, tuple(a.channels), c, size), decoder_spec(a.latent_dim, tuple(a.channels), c, size)


def load_autoencoder(cfg: RunConfig, ds: ImageDataset, directory) -> tuple:
    """Load encoder/decoder checkpoints and check they fit the configured architecture."""
    directory = Path(directory)
    nets = []
    for name, spec in zip(("encoder", "decoder"), _specs(cfg, ds)):
        path = directory / f"{name}.dsmw"
        if not path.exists():
            raise ConfigError(f"no {name} checkpoint at {path}; run `train` first", "checkpoint")
        try:
            store = load_params(path)
        except ValueError as exc:
            raise ConfigError(str(exc), "checkpoint") from None
        ref = init_params(spec, np.random.default_rng(0))
        for kind, have, want in (("parameter", store.params, ref.params), ("buffer", store.buffers, ref.buffers)):
            bad = sorted(k for k in set(have) | set(want) if k not in have or k not in want or have[k].shape != want[k].shape)
            if bad:
                raise ConfigError(
                    f"{name} checkpoint does not match the configured architecture ({kind} {bad[0]})", "autoencoder"
                )
        nets.append(Network(spec, store))
    return tuple(nets)


def _train_record(cfg: RunConfig) -> dict:
    return {"autoencoder": cfg.autoencoder.model_dump(), "profile": list(cfg.profile()), "seed": cfg.seed}


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig, out: OutputDir) -> None:
    from .trainer import train

    train_pool, _ = load_pools(cfg)
    ds = training_set(cfg, train_pool)
    ae_cfg = cfg.train_config(autoencoder_seed(cfg.seed))
    enc_spec, dec_spec = _specs(cfg, ds)
    log.info("training autoencoder on %d images for up to %d epochs", len(ds), ae_cfg.epochs)
    result = train(enc_spec, dec_spec, ds, ae_cfg, progress=lambda r: log.info(
        "epoch %d  recon %.5f  penalty %.5f  total %.5f", r.epoch, r.reconstruction, r.penalty, r.total))
    enc_path, dec_path = out.checkpoints / "encoder.dsmw", out.checkpoints / "decoder.dsmw"
    save_params(result.encoder.params, enc_path)
    save_params(result.decoder.params, dec_path)
    loss_path = out.reports / "loss_history.csv"
    lines = ["epoch,reconstruction,penalty,total"]
    lines += [f"{r.epoch},{r.reconstruction!r},{r.penalty!r},{r.total!r}" for r in result.history]
    loss_path.write_text("\n".join(lines) + "\n")
    extra = _train_record(cfg)
    extra.update({"epochs_run": len(result.history), "stopped_early": result.stopped_early,
                  "train_counts": ds.counts().tolist()})
    update_manifest(out, cfg, "train", [enc_path, dec_path, loss_path], extra)
    print(f"trained {len(result.history)} epochs, final loss {result.history[-1].total:.5f}; checkpoints in {out.checkpoints}")


def cmd_generate(cfg: RunConfig, out: OutputDir, checkpoint=None) -> None:
    train_pool, _ = load_pools(cfg)
    ds = training_set(cfg, train_pool)
    enc, dec = load_autoencoder(cfg, ds, checkpoint or out.checkpoints)
    plan = GenerationPlan(cfg.generation.counts, cfg.generation.k, derive_seed(cfg.seed, "smote/0"))
    augmented = generate(enc, dec, ds, plan).dataset
    paths = export_augmented(augmented, out.augmented)
    for stale in out.images.glob("class_*.png"):
        stale.unlink()
    grids = export_class_grids(augmented, out.images)
    update_manifest(out, cfg, "generate", list(paths.values()) + grids, {
        "class_counts_before": ds.counts().tolist(),
        "class_counts_after": augmented.counts().tolist(),
        "grids": [g.name for g in grids],
    })
    print(f"wrote {len(augmented)} images ({int(augmented.synthetic.sum())} synthetic), {len(grids)} class grids")


def _experiment(cfg: RunConfig, pools, method: str) -> ExperimentConfig:
    train_pool, test_pool = pools
    return ExperimentConfig(
        train_pool,
        test_pool,
        method=method,
        profile=cfg.profile(),
        balanced_test=cfg.evaluation.balanced_test,
        imbalanced_test=tuple(cfg.evaluation.imbalanced_test),
        seed=cfg.seed,
        k=cfg.generation.k,
        folds=cfg.evaluation.folds,
        autoencoder=cfg.train_config(0),
        classifier=cfg.classifier_config(),
    )


def _warm_cache(cfg: RunConfig, out: OutputDir, train_pool) -> dict:
    """Reuse checkpoints from `train` when they were made from the same config and seed."""
    cache = {}
    if cfg.evaluation.folds or not out.manifest.exists():
        return cache
    record = json.loads(out.manifest.read_text()).get("commands", {}).get("train", {})
    if {k: record.get(k) for k in ("autoencoder", "profile", "seed")} != _train_record(cfg):
        return cache
    ds = training_set(cfg, train_pool)
    try:
        nets = load_autoencoder(cfg, ds, out.checkpoints)
    except ConfigError:
        return cache
    cache[autoencoder_key(ds, cfg.train_config(autoencoder_seed(cfg.seed)))] = nets
    log.info("reusing trained autoencoder from %s", out.checkpoints)
    return cache


def _summary_table(records) -> str:
    lines = [f"{'method':<12} {'fold':>4} {'protocol':<11} {'ACSA':>7} {'GM':>7} {'F1':>7}"]
    for r in records:
        lines.append(f"{r.method:<12} {r.fold:>4} {r.protocol:<11} {r.report.acsa:7.4f} {r.report.gm:7.4f} {r.report.macro_f1:7.4f}")
    return "\n".join(lines)


def cmd_evaluate(cfg: RunConfig, out: OutputDir) -> None:
    pools = load_pools(cfg)
    cache = _warm_cache(cfg, out, pools[0])
    records, runs = [], []
    for method in cfg.methods():
        res = run_experiment(_experiment(cfg, pools, method), cache, progress=log.info)
        records.extend(res.records)
        runs.append({"metadata": res.metadata, "train_counts": res.train_counts,
                     "reports": [dict(r.report.to_dict(), fold=r.fold) for r in res.records]})
    csv_path, json_path = out.reports / "metrics.csv", out.reports / "metrics.json"
    csv_path.write_text(records_csv(records))
    _write_json(json_path, {"runs": runs, "paper_anchors": PAPER_ANCHORS})
    update_manifest(out, cfg, "evaluate", [csv_path, json_path])
    print(_summary_table(records))


def _sweep_plots(result, out: OutputDir) -> list:
    paths = []
    legend = {"x": "imbalance ratio (log scale), one tick per ratio", "y": "metric value, ticks every 0.1 from 0 to 1",
              "bands": "shaded region = mean +/- 1 sample sd over repetitions", "curves": {}}
    for i, m in enumerate(result.methods):
        legend["curves"][m] = "rgb(%d,%d,%d)" % PALETTE[i % len(PALETTE)]
    for metric in ("acsa", "gm", "f1"):
        curves, bands = {}, {}
        for m in result.methods:
            curves[m], bands[m] = result.curve(m, metric)
        canvas = line_plot(result.ratios, curves, bands, log_x=True)
        path = out.images / f"sweep_{metric}_{result.protocol}.png"
        write_png(path, canvas)
        paths.append(path)
    legend_path = out.images / "sweep_legend.json"
    _write_json(legend_path, legend)
    return paths + [legend_path]


def cmd_sweep(cfg: RunConfig, out: OutputDir) -> None:
    pools = load_pools(cfg)
    s = cfg.sweep
    base = _experiment(cfg, pools, s.methods[0])
    result = sweep(base, s.ratios, tuple(s.methods), s.repetitions, s.protocol, cfg.imbalance.majority,
                   progress=log.info)
    csv_path, json_path = out.reports / "sweep.csv", out.reports / "sweep.json"
    csv_path.write_text(records_csv(result.records))
    _write_json(json_path, sweep_summary(result))
    plots = _sweep_plots(result, out)
    update_manifest(out, cfg, "sweep", [csv_path, json_path] + plots, {"trend_flags": result.flags})
    for f in result.flags:
        print(f"trend flag: {f}")
    print(f"{len(result.records)} sweep rows written to {csv_path}")


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "evaluate": cmd_evaluate, "sweep": cmd_sweep}
HELP = {
    "train": "train the encoder/decoder on the imbalanced training set",
    "generate": "balance the training set with decoded latent-SMOTE images",
    "evaluate": "train classifiers and score them on both test protocols",
    "sweep": "repeat evaluation across imbalance ratios and plot the curves",
}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepsmote", description="Latent-space SMOTE for imbalanced image data.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name == "generate":
            p.add_argument("--checkpoint", help="directory holding encoder.dsmw and decoder.dsmw (default: OUT/checkpoints)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
        if cfg.out is None:
            raise ConfigError("an output directory is required (set `out` or pass --out)", "out")
        out = OutputDir(cfg.out)
        with out.locked():
            if args.command == "generate":
                cmd_generate(cfg, out, args.checkpoint)
            else:
                COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
