import csv
import json

import numpy as np
import pytest
from PIL import Image

from deepsmote.cli import main
from deepsmote.config import DESK_PROFILE, load_config, parse_config
from deepsmote.data import ImageDataset, load_idx, save_idx_pair
from deepsmote.errors import ConfigError


def write_split(directory, prefix, per_class, seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(per_class)), per_class)
    images = rng.normal(30, 15, (len(labels), 1, 16, 16))
    for i, c in enumerate(labels):
        r, q = divmod(int(c), 2)
        images[i, 0, r * 8:(r + 1) * 8, q * 8:(q + 1) * 8] += 170
    ds = ImageDataset(np.clip(images, 0, 255).astype(np.uint8), labels, len(per_class))
    save_idx_pair(ds, directory / f"{prefix}-images-idx3-ubyte", directory / f"{prefix}-labels-idx1-ubyte")


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("idx")
    write_split(d, "train", [30] * 4, 0)
    write_split(d, "t10k", [12] * 4, 1)
    return d


def make_config(path, data_dir, **over):
    cfg = {
        "seed": 3,
        "data": {
            "train_images": str(data_dir / "train-images-idx3-ubyte"),
            "train_labels": str(data_dir / "train-labels-idx1-ubyte"),
            "test_images": str(data_dir / "t10k-images-idx3-ubyte"),
            "test_labels": str(data_dir / "t10k-labels-idx1-ubyte"),
            "class_count": 4,
        },
        "imbalance": {"profile": [20, 10, 6, 4]},
        "autoencoder": {"latent_dim": 300, "lr": 0.0002, "channels": [4, 4, 4, 4], "batch_size": 8, "epochs": 2},
        "classifier": {"epochs": 2, "batch_size": 16},
        "evaluation": {"methods": ["none", "deep_smote"], "balanced_test": 8, "imbalanced_test": [8, 4, 3, 2]},
        "sweep": {"ratios": [2, 4], "methods": ["none"], "repetitions": 1},
        "generation": {"k": 3},
    }
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg))
    return path


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    root = tmp_path_factory.mktemp("run")
    cfg = make_config(root / "config.json", data_dir)
    out = root / "out"
    assert run("train", "--config", cfg, "--out", out) == 0
    return cfg, out


# ---------------------------------------------------------------- config


def test_config_requires_seed(tmp_path, data_dir, capsys):
    raw = json.loads(make_config(tmp_path / "c.json", data_dir).read_text())
    del raw["seed"]
    (tmp_path / "c.json").write_text(json.dumps(raw))
    assert run("train", "--config", tmp_path / "c.json", "--out", tmp_path / "o") == 2
    assert "seed" in capsys.readouterr().err
    # the flag satisfies it
    assert load_config(tmp_path / "c.json", {"seed": 11}).seed == 11


def test_missing_dataset_names_field(tmp_path, data_dir, capsys):
    cfg = make_config(tmp_path / "c.json", data_dir)
    raw = json.loads(cfg.read_text())
    raw["data"]["test_labels"] = str(tmp_path / "missing")
    cfg.write_text(json.dumps(raw))
    assert run("evaluate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "data.test_labels" in capsys.readouterr().err


def test_config_field_paths(data_dir, tmp_path):
    raw = json.loads(make_config(tmp_path / "c.json", data_dir).read_text())
    raw["autoencoder"]["batch_size"] = 1
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert info.value.field == "autoencoder.batch_size"
    raw["autoencoder"]["batch_size"] = 8
    raw["sweep"]["ratios"] = [100, 20]
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert info.value.field == "sweep.ratios"
    raw["sweep"]["ratios"] = [20, 400]
    raw["bogus"] = 1
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert info.value.field == "bogus"


def test_config_defaults_are_desk_scale(data_dir, tmp_path):
    raw = json.loads(make_config(tmp_path / "c.json", data_dir).read_text())
    del raw["imbalance"], raw["autoencoder"]
    raw["data"]["class_count"] = 10
    cfg = parse_config(raw)
    assert cfg.profile() == DESK_PROFILE
    assert cfg.autoencoder.latent_dim == 300 and cfg.autoencoder.lr == 0.0002


def test_relative_paths_resolve_against_config(tmp_path, data_dir):
    raw = json.loads(make_config(tmp_path / "c.json", data_dir).read_text())
    for k in raw["data"]:
        if k != "class_count":
            raw["data"][k] = raw["data"][k].rsplit("/", 1)[1]
    (data_dir / "rel.json").write_text(json.dumps(raw))
    assert load_config(data_dir / "rel.json").data.train_images == data_dir / "train-images-idx3-ubyte"


# ---------------------------------------------------------------- train


def test_train_outputs(trained):
    _, out = trained
    assert (out / "checkpoints" / "encoder.dsmw").exists()
    assert (out / "checkpoints" / "decoder.dsmw").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["latent_dim"] == 300 and manifest["lr"] == 0.0002
    assert manifest["commands"]["train"]["train_counts"] == [20, 10, 6, 4]
    rows = list(csv.reader((out / "reports" / "loss_history.csv").open()))
    assert rows[0] == ["epoch", "reconstruction", "penalty", "total"] and len(rows) == 3
    assert not (out / ".lock").exists()


def test_train_rerun_byte_identical(trained, tmp_path):
    cfg, out = trained
    again = tmp_path / "again"
    assert run("train", "--config", cfg, "--out", again) == 0
    for name in ("encoder.dsmw", "decoder.dsmw"):
        assert (out / "checkpoints" / name).read_bytes() == (again / "checkpoints" / name).read_bytes()
    assert (out / "reports" / "loss_history.csv").read_bytes() == (again / "reports" / "loss_history.csv").read_bytes()


def test_seed_flag_overrides(trained, tmp_path):
    cfg, out = trained
    assert run("train", "--config", cfg, "--out", tmp_path / "s", "--seed", 4) == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 4
    assert (out / "checkpoints" / "encoder.dsmw").read_bytes() != (tmp_path / "s" / "checkpoints" / "encoder.dsmw").read_bytes()


# ---------------------------------------------------------------- generate


def test_generate_exports(trained):
    cfg, out = trained
    assert run("generate", "--config", cfg, "--out", out) == 0
    aug = load_idx(out / "augmented" / "augmented-images-idx3-ubyte", out / "augmented" / "augmented-labels-idx1-ubyte")
    assert aug.counts().tolist() == [20, 20, 20, 20]
    side = json.loads((out / "augmented" / "augmented.json").read_text())
    assert side["synthetic_ranges"] == [[40, 80]]
    grids = sorted(p.name for p in (out / "images").glob("class_*.png"))
    assert grids == ["class_1.png", "class_2.png", "class_3.png"]
    with Image.open(out / "images" / "class_3.png") as im:
        assert im.mode == "L"


def test_generate_balanced_input_no_grids(tmp_path, data_dir, trained):
    cfg = make_config(tmp_path / "c.json", data_dir, imbalance={"profile": [10, 10, 10, 10]})
    _, out = trained
    assert run("generate", "--config", cfg, "--out", tmp_path / "o", "--checkpoint", out / "checkpoints") == 0
    aug = load_idx(tmp_path / "o" / "augmented" / "augmented-images-idx3-ubyte",
                   tmp_path / "o" / "augmented" / "augmented-labels-idx1-ubyte")
    assert aug.counts().tolist() == [10] * 4
    assert list((tmp_path / "o" / "images").glob("class_*.png")) == []


def test_generate_checkpoint_mismatch(tmp_path, data_dir, trained, capsys):
    _, out = trained
    cfg = make_config(tmp_path / "c.json", data_dir, autoencoder={"latent_dim": 16})
    assert run("generate", "--config", cfg, "--out", tmp_path / "o", "--checkpoint", out / "checkpoints") == 2
    assert "architecture" in capsys.readouterr().err
    assert run("generate", "--config", cfg, "--out", tmp_path / "empty") == 2


# ---------------------------------------------------------------- evaluate


def test_evaluate_csv_and_pairing(trained, capsys):
    cfg, out = trained
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    text = (out / "reports" / "metrics.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    assert text.splitlines()[0] == "method,ratio,seed,fold,protocol,acsa,gm,f1"
    by_method = {m: [(r["seed"], r["fold"], r["protocol"]) for r in rows if r["method"] == m] for m in ("none", "deep_smote")}
    assert by_method["none"] == by_method["deep_smote"] == [("3", "0", "balanced"), ("3", "0", "imbalanced")]
    assert all(0 <= float(r[k]) <= 1 for r in rows for k in ("acsa", "gm", "f1"))
    report = json.loads((out / "reports" / "metrics.json").read_text())
    assert report["paper_anchors"]["acsa"] == 0.9616
    assert "ACSA" in capsys.readouterr().out


def test_evaluate_rerun_identical(trained, tmp_path):
    cfg, out = trained
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    first = (out / "reports" / "metrics.csv").read_bytes()
    # a fresh directory has no checkpoint to reuse, so the autoencoder is retrained
    assert run("evaluate", "--config", cfg, "--out", tmp_path / "fresh") == 0
    assert (tmp_path / "fresh" / "reports" / "metrics.csv").read_bytes() == first
    assert run("evaluate", "--config", cfg, "--out", out) == 0
    assert (out / "reports" / "metrics.csv").read_bytes() == first


# ---------------------------------------------------------------- sweep


def test_sweep_outputs(tmp_path, data_dir):
    cfg = make_config(tmp_path / "c.json", data_dir, imbalance={"majority": 20})
    out = tmp_path / "o"
    assert run("sweep", "--config", cfg, "--out", out) == 0
    rows = list(csv.DictReader((out / "reports" / "sweep.csv").open()))
    assert [float(r["ratio"]) for r in rows] == [2.0, 4.0]
    summary = json.loads((out / "reports" / "sweep.json").read_text())
    assert all(v == 0.0 for s in summary["spread"].values() for v in s.values())
    for metric in ("acsa", "gm", "f1"):
        with Image.open(out / "images" / f"sweep_{metric}_balanced.png") as im:
            assert im.size == (480, 320)


# ---------------------------------------------------------------- failures


def test_lockfile_blocks_second_writer(tmp_path, data_dir, capsys):
    cfg = make_config(tmp_path / "c.json", data_dir)
    (tmp_path / "o").mkdir()
    (tmp_path / "o" / ".lock").write_text("123")
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "locked" in capsys.readouterr().err
    assert (tmp_path / "o" / ".lock").exists()


def test_corrupt_idx_is_data_error(tmp_path, data_dir, capsys):
    bad = tmp_path / "bad-labels"
    bad.write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x05\x01")
    cfg = make_config(tmp_path / "c.json", data_dir)
    raw = json.loads(cfg.read_text())
    raw["data"]["train_labels"] = str(bad)
    cfg.write_text(json.dumps(raw))
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 3
    assert "byte offset" in capsys.readouterr().err


def test_infeasible_profile_is_data_error(tmp_path, data_dir):
    cfg = make_config(tmp_path / "c.json", data_dir, imbalance={"profile": [500, 10, 6, 4]})
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_abort(tmp_path, data_dir, capsys):
    cfg = make_config(tmp_path / "c.json", data_dir, autoencoder={"lr": 1e38, "epochs": 3})
    assert run("train", "--config", cfg, "--out", tmp_path / "o") == 4
    assert "epoch" in capsys.readouterr().err
