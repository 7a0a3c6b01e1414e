import json

import pytest

from maxplusnn.config import (
    ConfigError,
    PRESETS,
    apply_override,
    load_config,
    make_dataset,
    make_head_spec,
    make_train_config,
    preset_config,
    resolve_batchnorm,
    validate_config,
)


def test_presets_validate():
    for name in PRESETS:
        cfg = preset_config(name)
        if name == "cifar10":
            # file paths are site-specific, fill in placeholders
            cfg["data"]["train_paths"] = ["batch_1.bin"]
        validate_config(cfg)


def test_preset_copies_are_independent():
    a = preset_config("synthetic")
    a["train"]["batch_size"] = 7
    assert PRESETS["synthetic"]["train"]["batch_size"] == 128


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_config("nope")


def test_load_config_merges_file_over_preset(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "synthetic",
                                "train": {"batch_size": 64},
                                "seed": 5}))
    cfg = load_config(path)
    assert cfg["train"]["batch_size"] == 64
    assert cfg["train"]["weight_decay"] == PRESETS["synthetic"]["train"]["weight_decay"]
    assert cfg["seed"] == 5


def test_load_config_preset_flag_beats_file_key(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"preset": "mtat-like", "head": {"d_in": 64, "d_out": 50},
                                "data": {"d": 64}}))
    cfg = load_config(path, preset="synthetic")
    assert cfg["name"] == "synthetic"


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="top level"):
        load_config(path)


def test_override_scalar_and_string():
    cfg = preset_config("synthetic")
    apply_override(cfg, "train.batch_size=256")
    apply_override(cfg, "head.variant=relu")
    apply_override(cfg, "head.batchnorm=false")
    assert cfg["train"]["batch_size"] == 256
    assert cfg["head"]["variant"] == "relu"
    assert cfg["head"]["batchnorm"] is False


def test_override_list_index():
    cfg = preset_config("mtat-like")
    apply_override(cfg, "train.phases.0.lr=0.01")
    apply_override(cfg, "train.phases.1.epochs=5")
    assert cfg["train"]["phases"][0]["lr"] == 0.01
    assert cfg["train"]["phases"][1]["epochs"] == 5
    with pytest.raises(ConfigError, match="no such list index"):
        apply_override(cfg, "train.phases.9.lr=0.01")


def test_override_requires_equals():
    with pytest.raises(ConfigError, match="path.to.field=value"):
        apply_override({}, "train.batch_size")


def test_validation_catches_bad_fields():
    bad = [
        ("head.variant=linear", "head.variant"),
        ("head.d_hidden=0", "head.d_hidden"),
        ("head.batchnorm=maybe", "head.batchnorm"),
        ("data.kind=parquet", "data.kind"),
        ("data.k_pieces=0", "data.k_pieces"),
        ("data.support=-1", "data.support"),
        ("data.pool=1.5", "data.pool"),
        ("train.momentum=1.0", "train.momentum"),
        ("train.weight_decay=-0.1", "train.weight_decay"),
        ("train.batch_size=0", "train.batch_size"),
        ("train.phases=[]", "train.phases"),
        ('train.phases.0.optimizer="rmsprop"', "train.phases.0"),
        ("seed=null", "seed"),
    ]
    for override, at in bad:
        cfg = preset_config("synthetic")
        apply_override(cfg, override)
        with pytest.raises(ConfigError) as err:
            validate_config(cfg)
        assert str(err.value).startswith(at), (override, str(err.value))


def test_batchnorm_auto_policy():
    cfg = preset_config("synthetic")
    assert resolve_batchnorm(cfg, "relu") is True
    assert resolve_batchnorm(cfg, "sparse_morph") is True
    assert resolve_batchnorm(cfg, "dense_morph") is False
    cifar = preset_config("cifar10")
    assert resolve_batchnorm(cifar, "dense_morph") is True
    cfg["head"]["batchnorm"] = True
    assert resolve_batchnorm(cfg, "dense_morph") is True


def test_make_head_spec_infers_dims_from_dataset():
    cfg = preset_config("synthetic")
    cfg["head"]["d_in"] = None
    cfg["head"]["d_out"] = None
    cfg["data"].update({"n": 400, "d": 12, "tags": 6, "k_pieces": 2})
    ds = make_dataset(cfg)
    spec = make_head_spec(cfg, ds)
    assert spec.d_in == 12 and spec.d_out == 6
    with pytest.raises(ConfigError, match="d_in"):
        make_head_spec(cfg)


def test_make_train_config():
    cfg = preset_config("mtat-like")
    tc = make_train_config(cfg)
    assert [p.optimizer for p in tc.phases] == ["adam", "sgd_nesterov"]
    assert tc.phases[0].epochs == 80
    assert tc.momentum == 0.9
    assert tc.seed == cfg["seed"]


def test_make_dataset_passes_generator_knobs():
    cfg = preset_config("synthetic")
    cfg["data"].update({"n": 300, "d": 10, "tags": 4, "k_pieces": 2,
                        "support": 3, "pool": 0})
    ds = make_dataset(cfg)
    assert ds.n_features == 10
    assert ds.name == "synthetic"


def test_load_config_applies_overrides_then_validates(tmp_path):
    cfg = load_config(None, preset="synthetic", overrides=("seed=9",))
    assert cfg["seed"] == 9
    with pytest.raises(ConfigError):
        load_config(None, preset="synthetic", overrides=("train.batch_size=0",))
