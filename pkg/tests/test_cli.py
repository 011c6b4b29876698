import json
import os

import pytest

from modrec.cli import main

TINY = [
    "--set", "data.n_items=60",
    "--set", "data.n_users=50",
    "--set", "data.n_clusters=4",
    "--set", "data.n_v=1",
    "--set", "data.n_t=1",
    "--set", "data.d_v=8",
    "--set", "data.d_t=8",
    "--set", "model.d=8",
    "--set", "model.item_layers=1",
    "--set", "model.seq_layers=1",
    "--set", "train.epochs=1",
    "--set", "train.batch_size=16",
    "--set", "eval.ks=[10]",
    "--set", "eval.groups=2",
]


@pytest.fixture(autouse=True)
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("MODREC_OUT", str(tmp_path / "runs"))
    return tmp_path


def test_gen_is_byte_reproducible(out_root):
    a, b = out_root / "cat_a", out_root / "cat_b"
    assert main(["gen", "--out", str(a), *TINY]) == 0
    assert main(["gen", "--out", str(b), *TINY]) == 0
    for name in ("manifest.json", "visual.f64", "textual.f64", "interactions.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_train_dry_run_prints_config_and_writes_nothing(out_root, capsys):
    assert main(["train", "--dry-run", *TINY, "--set", "seed=5"]) == 0
    flat = json.loads(capsys.readouterr().out)
    assert flat["seed"] == 5 and flat["model.d"] == 8
    assert not (out_root / "runs").exists()


def test_train_then_eval_roundtrip(out_root, capsys):
    run_dir = out_root / "run1"
    assert main(["train", "--out", str(run_dir), *TINY]) == 0
    for name in ("checkpoint.npz", "metrics.json", "losscurve.csv",
                 "popularity.csv", "run_manifest.json"):
        assert (run_dir / name).exists(), name
    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    assert manifest["config"]["model.d"] == 8
    assert "checkpoint.npz" in manifest["outputs"]
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert "ensemble" in metrics["branches"]

    eval_dir = out_root / "eval1"
    capsys.readouterr()
    assert main([
        "eval", "--checkpoint", str(run_dir / "checkpoint.npz"),
        "--split", "test", "--out", str(eval_dir), *TINY,
    ]) == 0
    again = json.loads((eval_dir / "metrics.json").read_text())
    assert again == metrics  # same checkpoint, same split, same report


def test_losscurve_columns(out_root):
    run_dir = out_root / "run2"
    assert main(["train", "--out", str(run_dir), *TINY]) == 0
    header = (run_dir / "losscurve.csv").read_text().splitlines()[0]
    for col in ("step", "epoch", "ce_v", "ce_id", "kl_v", "ramp_w", "total"):
        assert col in header.split(",")


def test_unknown_config_key_fails_with_guidance(capsys):
    assert main(["train", "--dry-run", "--set", "model.width=4"]) == 1
    err = capsys.readouterr().err
    assert "model.width" in err and "item_layers" in err


def test_missing_checkpoint_is_reported(out_root, capsys):
    assert main(["eval", "--checkpoint", str(out_root / "nope.npz"), *TINY]) == 1
    assert "error" in capsys.readouterr().err


def test_ablate_dry_run_lists_variants(capsys):
    assert main(["ablate", "--dry-run"]) == 0
    out = capsys.readouterr().out
    for variant in ("full", "no_id_mask", "no_distill", "no_id"):
        assert variant in out


def test_sweep_dry_run_cell_layout(capsys):
    assert main([
        "sweep", "--dry-run",
        "--set", "distill.T=0.5", "--set", "distill.alpha=50",
    ]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 13  # baseline + 6 temperatures + 6 ramp lengths
    assert lines[0].startswith("none")
    assert sum(l.startswith("T:") for l in lines) == 6
    assert sum(l.startswith("alpha:") for l in lines) == 6
    # the fixed coordinate of each axis comes from the configured preset
    assert "T: T=0.1 alpha=50.0" in lines
    assert "alpha: T=0.5 alpha=10.0" in lines
