"""Run configuration: presets, JSON config files, dotted-path overrides.

A config is one JSON document with four sections:

  {
    "name": "synthetic",
    "head": {"variant": "sparse_morph", "d_in": 64, "d_hidden": 128,
             "d_out": 50, "pooling": 2, "batchnorm": "auto"},
    "data": {"kind": "max_affine", "n": 20000, "d": 64, "tags": 50,
             "k_pieces": 8},
    "train": {"phases": [{"optimizer": "adam", "lr": 0.001, "epochs": 30}],
              "momentum": 0.9, "weight_decay": 0.001, "batch_size": 128},
    "seed": 0
  }

`batchnorm: "auto"` resolves per preset policy: on everywhere, except the
dense_morph variant on the mtat-like and synthetic presets. Flags override
fields by dotted path ("train.batch_size=256", "head.variant=relu"); list
elements are addressed by index ("train.phases.0.lr=0.01").
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .datasets import (
    Dataset,
    gen_max_affine,
    load_cifar10_binary,
    load_features_csv,
    load_idx,
)
from .heads import VARIANTS, HeadSpec
from .optim import TrainConfig, TrainPhase

__all__ = [
    "ConfigError",
    "PRESETS",
    "preset_config",
    "load_config",
    "apply_override",
    "validate_config",
    "make_head_spec",
    "make_train_config",
    "make_dataset",
]

DATA_KINDS = ("max_affine", "cifar10", "idx", "csv")


class ConfigError(ValueError):
    """Invalid configuration; `path` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


PRESETS = {
    # Tag-prediction protocol at full head size: two-phase schedule, 50 tags.
    "mtat-like": {
        "name": "mtat-like",
        "head": {"variant": "sparse_morph", "d_in": 512, "d_hidden": 512,
                 "d_out": 50, "pooling": 2, "batchnorm": "auto"},
        "data": {"kind": "max_affine", "n": 20000, "d": 512, "tags": 50, "k_pieces": 3},
        "train": {"phases": [{"optimizer": "adam", "lr": 1e-4, "epochs": 80},
                             {"optimizer": "sgd_nesterov", "lr": 1e-3, "epochs": 20}],
                  "momentum": 0.9, "weight_decay": 1e-4, "batch_size": 128},
        "seed": 0,
    },
    # Image-classification protocol: single short Adam phase, BN everywhere.
    "cifar10": {
        "name": "cifar10",
        "head": {"variant": "sparse_morph", "d_in": None, "d_hidden": 512,
                 "d_out": 10, "pooling": 2, "batchnorm": "auto"},
        "data": {"kind": "cifar10", "train_paths": [], "test_path": None,
                 "grayscale": False},
        "train": {"phases": [{"optimizer": "adam", "lr": 1e-3, "epochs": 10}],
                  "momentum": 0.9, "weight_decay": 1e-4, "batch_size": 128},
        "seed": 0,
    },
    # Desk-scale benchmark: small dims, quick single-phase schedule.
    "synthetic": {
        "name": "synthetic",
        "head": {"variant": "sparse_morph", "d_in": 64, "d_hidden": 128,
                 "d_out": 50, "pooling": 2, "batchnorm": "auto"},
        "data": {"kind": "max_affine", "n": 20000, "d": 64, "tags": 50, "k_pieces": 8},
        "train": {"phases": [{"optimizer": "adam", "lr": 1e-3, "epochs": 30}],
                  "momentum": 0.9, "weight_decay": 1e-3, "batch_size": 128},
        "seed": 0,
    },
}

# Presets whose dense_morph variant runs without batch normalization.
_BN_OFF_DENSE = ("mtat-like", "synthetic")


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}, expected one of "
                                    f"{sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(cfg: dict, dotted: str) -> None:
    """Set one field in place from a KEY=VALUE string, KEY a dotted path.
    VALUE parses as JSON when possible, else as a bare string."""
    if "=" not in dotted:
        raise ConfigError(dotted, "override must look like path.to.field=value")
    key, _, raw = dotted.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError):
                raise ConfigError(".".join(parts[:i + 1]), "no such list index") from None
        elif isinstance(node, dict):
            node = node.setdefault(part, {})
        else:
            raise ConfigError(".".join(parts[:i + 1]), "not a container")
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(key, "no such list index") from None
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigError(key, "not a container")


def load_config(path=None, preset: str | None = None, overrides=()) -> dict:
    """Resolve a config: preset defaults, then the file, then overrides.
    A `preset` key inside the file supplies the base when no --preset flag
    was given."""
    file_cfg = {}
    if path is not None:
        try:
            file_cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(str(path), f"invalid JSON ({err})") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(str(path), "top level must be a JSON object")
    base_name = preset or file_cfg.pop("preset", None)
    cfg = preset_config(base_name) if base_name else copy.deepcopy(_EMPTY)
    cfg = _merge(cfg, file_cfg)
    for o in overrides:
        apply_override(cfg, o)
    validate_config(cfg)
    return cfg


_EMPTY = {
    "name": "run",
    "head": {"variant": "sparse_morph", "d_in": None, "d_hidden": 128, "d_out": None,
             "pooling": 2, "batchnorm": "auto"},
    "data": {"kind": "max_affine", "n": 20000, "d": 64, "tags": 50, "k_pieces": 3},
    "train": {"phases": [{"optimizer": "adam", "lr": 1e-3, "epochs": 30}],
              "momentum": 0.9, "weight_decay": 1e-4, "batch_size": 128},
    "seed": 0,
}


def _require(cfg: dict, path: str, types, allow_none: bool = False):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(path, "missing field")
        node = node[part]
    if node is None and allow_none:
        return None
    if not isinstance(node, types) or isinstance(node, bool) and bool not in _astuple(types):
        raise ConfigError(path, f"expected {_typename(types)}, got {node!r}")
    return node


def _astuple(t):
    return t if isinstance(t, tuple) else (t,)


def _typename(types):
    return "/".join(t.__name__ for t in _astuple(types))


def validate_config(cfg: dict) -> None:
    _require(cfg, "name", str)
    _require(cfg, "seed", int)
    variant = _require(cfg, "head.variant", str)
    if variant not in VARIANTS:
        raise ConfigError("head.variant", f"must be one of {VARIANTS}, got {variant!r}")
    for key in ("head.d_hidden", "head.pooling"):
        if _require(cfg, key, int) < 1:
            raise ConfigError(key, "must be positive")
    for key in ("head.d_in", "head.d_out"):
        v = _require(cfg, key, int, allow_none=True)
        if v is not None and v < 1:
            raise ConfigError(key, "must be positive (or null to infer from data)")
    bn = _require(cfg, "head.batchnorm", (bool, str))
    if isinstance(bn, str) and bn != "auto":
        raise ConfigError("head.batchnorm", f'must be true, false, or "auto", got {bn!r}')
    kind = _require(cfg, "data.kind", str)
    if kind not in DATA_KINDS:
        raise ConfigError("data.kind", f"must be one of {DATA_KINDS}, got {kind!r}")
    if kind == "max_affine":
        for key in ("data.n", "data.d", "data.tags", "data.k_pieces"):
            if _require(cfg, key, int) < 1:
                raise ConfigError(key, "must be positive")
        for opt in ("support", "pool"):
            val = cfg["data"].get(opt)
            if val is not None and (not isinstance(val, int) or val < 0):
                raise ConfigError(f"data.{opt}", "must be a nonnegative integer or null")
    elif kind == "cifar10":
        paths = _require(cfg, "data.train_paths", list)
        if not paths:
            raise ConfigError("data.train_paths", "needs at least one batch file")
    elif kind == "idx":
        _require(cfg, "data.images", str)
        _require(cfg, "data.labels", str)
    else:
        _require(cfg, "data.path", str)
    phases = _require(cfg, "train.phases", list)
    if not phases:
        raise ConfigError("train.phases", "needs at least one phase")
    for i, ph in enumerate(phases):
        at = f"train.phases.{i}"
        if not isinstance(ph, dict):
            raise ConfigError(at, "each phase is an object")
        try:
            TrainPhase(ph.get("optimizer"), ph.get("lr"), ph.get("epochs"))
        except (ValueError, TypeError) as err:
            raise ConfigError(at, str(err)) from None
    mom = _require(cfg, "train.momentum", (int, float))
    if not 0.0 <= mom < 1.0:
        raise ConfigError("train.momentum", f"must be in [0, 1), got {mom}")
    if _require(cfg, "train.weight_decay", (int, float)) < 0:
        raise ConfigError("train.weight_decay", "must be nonnegative")
    if _require(cfg, "train.batch_size", int) < 1:
        raise ConfigError("train.batch_size", "must be positive")


def resolve_batchnorm(cfg: dict, variant: str) -> bool:
    bn = cfg["head"]["batchnorm"]
    if bn == "auto":
        return not (variant == "dense_morph" and cfg.get("name") in _BN_OFF_DENSE)
    return bool(bn)


def make_head_spec(cfg: dict, dataset: Dataset | None = None) -> HeadSpec:
    """HeadSpec from config, inferring null d_in/d_out from the dataset."""
    head = cfg["head"]
    d_in, d_out = head["d_in"], head["d_out"]
    if dataset is not None:
        if d_in is None:
            d_in = dataset.n_features
        if d_out is None:
            d_out = dataset.n_outputs
    if d_in is None or d_out is None:
        raise ConfigError("head.d_in" if d_in is None else "head.d_out",
                          "is null and no dataset was given to infer it from")
    return HeadSpec(cfg["head"]["variant"], d_in, head["d_hidden"], d_out,
                    pooling=head["pooling"],
                    batchnorm=resolve_batchnorm(cfg, head["variant"]),
                    seed=cfg["seed"])


def make_train_config(cfg: dict) -> TrainConfig:
    tr = cfg["train"]
    return TrainConfig(
        phases=tuple(TrainPhase(p["optimizer"], float(p["lr"]), int(p["epochs"]))
                     for p in tr["phases"]),
        momentum=float(tr["momentum"]),
        weight_decay=float(tr["weight_decay"]),
        batch_size=tr["batch_size"],
        seed=cfg["seed"],
    )


def make_dataset(cfg: dict) -> Dataset:
    data = cfg["data"]
    seed = cfg["seed"]
    kind = data["kind"]
    if kind == "max_affine":
        return gen_max_affine(data["n"], data["d"], data["k_pieces"], data["tags"],
                              seed=seed, support=data.get("support"),
                              pool=data.get("pool"), name=cfg["name"])
    if kind == "cifar10":
        return load_cifar10_binary(data["train_paths"], data.get("test_path"),
                                   seed=seed, grayscale=bool(data.get("grayscale", False)),
                                   name=cfg["name"])
    if kind == "idx":
        return load_idx(data["images"], data["labels"], seed=seed, name=cfg["name"])
    return load_features_csv(data["path"], seed=seed, name=cfg["name"])
