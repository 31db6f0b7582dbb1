import os

import numpy as np
import pytest

from followme.cli import main, parse_config_file


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, mini_dataset):
    """prepare -> train (2 epochs) on the session mini dataset."""
    root = tmp_path_factory.mktemp("pipeline")
    prep = root / "prep"
    ckpt = root / "model.npz"
    rc = main(["prepare", "--data", str(mini_dataset), "--horizon", "3", "--rate", "10",
               "--out", str(prep), "--stride", "25", "--ratios", "0.34,0.33,0.33",
               "--seed", "1"])
    assert rc == 0
    rc = main(["train", "--data", str(prep), "--out", str(ckpt), "--epochs", "2",
               "--seed", "2"])
    assert rc == 0
    return prep, ckpt


def test_prepare_outputs(pipeline):
    prep, _ = pipeline
    for name in ("train.npz", "val.npz", "test.npz", "split.json", "meta.json"):
        assert (prep / name).is_file()


def test_train_outputs(pipeline):
    _, ckpt = pipeline
    assert ckpt.is_file()
    history = ckpt.parent / (ckpt.name + ".history.csv")
    assert history.is_file()
    lines = [l for l in history.read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 2


def test_evaluate_deterministic_reports(pipeline, tmp_path):
    prep, ckpt = pipeline
    r1 = tmp_path / "r1.txt"
    r2 = tmp_path / "r2.txt"
    for out in (r1, r2):
        rc = main(["evaluate", "--ckpt", str(ckpt), "--data", str(prep),
                   "--out", str(out), "--seed", "9"])
        assert rc == 0
    assert r1.read_bytes() == r2.read_bytes()
    assert b"h3.ade=" in r1.read_bytes()


def test_evaluate_kalman_baseline(pipeline, tmp_path):
    prep, _ = pipeline
    out = tmp_path / "kalman.txt"
    rc = main(["evaluate", "--data", str(prep), "--baseline", "kalman",
               "--out", str(out), "--seed", "9"])
    assert rc == 0
    text = out.read_text()
    assert "h3.amd=" in text and "h3.amv=" in text


def test_analyze_fusion_outputs(pipeline, tmp_path):
    prep, ckpt = pipeline
    out = tmp_path / "fusion"
    rc = main(["analyze-fusion", "--ckpt", str(ckpt), "--data", str(prep),
               "--out", str(out), "--split", "val", "--seed", "4"])
    assert rc == 0
    for name in ("traces.npz", "contribution_histogram.csv", "contribution_magnitude.csv",
                 "contribution_histogram.png", "contribution_magnitude.png"):
        assert (out / name).is_file()


def test_plot_outputs(pipeline, tmp_path):
    prep, ckpt = pipeline
    out = tmp_path / "plots"
    rc = main(["plot", "--ckpt", str(ckpt), "--data", str(prep), "--out", str(out),
               "--cases", "3", "--seed", "4"])
    assert rc == 0
    files = sorted(out.glob("*.png"))
    assert len(files) == 3


def test_train_ablation_flags(pipeline, tmp_path):
    prep, _ = pipeline
    ckpt = tmp_path / "ablate.npz"
    rc = main(["train", "--data", str(prep), "--out", str(ckpt), "--epochs", "1",
               "--seed", "2", "--no-fusion", "--no-triplet"])
    assert rc == 0
    from followme.model import load_checkpoint
    model = load_checkpoint(ckpt)
    assert not model.config.use_fusion
    assert not model.config.use_triplet
    assert "fuse_w" not in model.params


def test_usage_errors(tmp_path):
    assert main(["evaluate", "--data", str(tmp_path)]) == 2        # no prepared split
    assert main(["train", "--data", str(tmp_path / "none"), "--out", "x.npz"]) == 2
    assert main(["generate", "--out", str(tmp_path), "--config",
                 str(tmp_path / "missing.cfg")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("not_a_real_key=3\n")
    assert main(["generate", "--out", str(tmp_path), "--config", str(bad)]) == 2
    assert main(["generate", "--nonsense-flag", "x"]) == 2


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# pipeline settings\nn_drivers=2\nepochs=7\nhidden_channels=16\n"
                   "use_triplet=false\nfusion_kernel=3,1\n")
    raw = parse_config_file(cfg)
    assert raw == {"n_drivers": "2", "epochs": "7", "hidden_channels": "16",
                   "use_triplet": "false", "fusion_kernel": "3,1"}


def test_config_drives_training(pipeline, tmp_path):
    prep, _ = pipeline
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs=1\nhidden_channels=4\nm_samples=4\nbatch_size=8\n")
    ckpt = tmp_path / "cfg_model.npz"
    rc = main(["train", "--data", str(prep), "--config", str(cfg), "--out", str(ckpt),
               "--seed", "3"])
    assert rc == 0
    from followme.model import load_checkpoint
    assert load_checkpoint(ckpt).config.hidden_channels == 4


def test_seed_env_fallback(pipeline, tmp_path, monkeypatch):
    prep, ckpt = pipeline
    out1 = tmp_path / "env1.txt"
    out2 = tmp_path / "env2.txt"
    monkeypatch.setenv("FOLLOWME_SEED", "33")
    assert main(["evaluate", "--ckpt", str(ckpt), "--data", str(prep),
                 "--out", str(out1)]) == 0
    monkeypatch.delenv("FOLLOWME_SEED")
    assert main(["evaluate", "--ckpt", str(ckpt), "--data", str(prep),
                 "--out", str(out2), "--seed", "33"]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_generate_cli_scene_count(tmp_path):
    rc = main(["generate", "--out", str(tmp_path / "g"), "--drivers", "1", "--seed", "0"])
    assert rc == 0
    assert len(list((tmp_path / "g" / "scenes").iterdir())) == 12
