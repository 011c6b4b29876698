import pytest

from modrec.config import ExperimentConfig, apply_setting, load_config


def test_defaults_are_valid():
    cfg = ExperimentConfig().validate()
    assert cfg.model.branch_list == ("v", "t", "id")


def test_validate_rejects_bad_values():
    cfg = ExperimentConfig()
    cfg.model.branches = "v,x"
    with pytest.raises(ValueError, match="branches"):
        cfg.validate()
    cfg = ExperimentConfig()
    cfg.model.fst = "cnn"
    with pytest.raises(ValueError, match="fst"):
        cfg.validate()
    cfg = ExperimentConfig()
    cfg.train.fusion = "middle"
    with pytest.raises(ValueError, match="fusion"):
        cfg.validate()
    cfg = ExperimentConfig()
    cfg.eval.ks = []
    with pytest.raises(ValueError, match="ks"):
        cfg.validate()
    cfg = ExperimentConfig()
    cfg.model.max_len = 10
    with pytest.raises(ValueError, match="max_len"):
        cfg.validate()


def test_apply_setting_coercions():
    cfg = ExperimentConfig()
    apply_setting(cfg, "seed", "7")
    apply_setting(cfg, "model.d", "64")
    apply_setting(cfg, "train.lr", "0.01")
    apply_setting(cfg, "distill.enabled", "false")
    apply_setting(cfg, "eval.ks", "[5, 50]")
    apply_setting(cfg, "model.fst", "separate")
    assert cfg.seed == 7 and cfg.model.d == 64 and cfg.train.lr == 0.01
    assert cfg.distill.enabled is False and cfg.eval.ks == [5, 50]
    assert cfg.model.fst == "separate"


def test_apply_setting_type_errors():
    cfg = ExperimentConfig()
    with pytest.raises(ValueError, match="integer"):
        apply_setting(cfg, "model.d", "2.5")
    with pytest.raises(ValueError, match="true/false"):
        apply_setting(cfg, "distill.enabled", "maybe")
    with pytest.raises(ValueError, match="number"):
        apply_setting(cfg, "train.lr", "fast")
    with pytest.raises(ValueError, match="list"):
        apply_setting(cfg, "eval.ks", "10")


def test_unknown_keys_name_the_accepted_ones():
    cfg = ExperimentConfig()
    with pytest.raises(ValueError) as err:
        apply_setting(cfg, "model.depth", "3")
    assert "model.depth" in str(err.value) and "item_layers" in str(err.value)
    with pytest.raises(ValueError, match="section"):
        apply_setting(cfg, "optim.lr", "0.1")
    with pytest.raises(ValueError, match="unknown config key"):
        apply_setting(cfg, "verbose", "1")


def test_load_config_file_with_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        "# a comment\n"
        "seed = 3\n"
        "model.d = 16  # inline comment\n"
        "\n"
        "distill.T = 0.3\n"
    )
    cfg = load_config(path, overrides=["model.d=24", "train.epochs=2"])
    assert cfg.seed == 3
    assert cfg.model.d == 24  # override wins over the file
    assert cfg.distill.T == 0.3 and cfg.train.epochs == 2


def test_load_config_reports_bad_lines(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("model.d\n")
    with pytest.raises(ValueError, match=":1:"):
        load_config(path)
    with pytest.raises(ValueError, match="key=value"):
        load_config(None, overrides=["model.d"])


def test_copy_is_deep_enough():
    cfg = ExperimentConfig()
    dup = cfg.copy()
    dup.model.d = 999
    dup.eval.ks.append(99)
    assert cfg.model.d != 999 and 99 not in cfg.eval.ks


def test_to_flat_round_trips_through_apply_setting():
    cfg = ExperimentConfig()
    cfg.model.d = 48
    flat = cfg.to_flat()
    rebuilt = ExperimentConfig()
    for key, value in flat.items():
        apply_setting(rebuilt, key, value)
    assert rebuilt.to_flat() == flat
