"""Dataset container, binary-format loaders, CSV ingestion, and the
synthetic max-affine benchmark.

Features are stored sample-major [n, d]; the training loop transposes
batches into the column-vector layout the heads expect. Every loader is
deterministic given its input bytes and seed, and never emits NaN or inf.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "from_arrays",
    "load_idx",
    "load_cifar10_binary",
    "gen_max_affine",
    "load_features_csv",
    "save_features_csv",
]

_SPLIT_STREAM = 21
_GEN_STREAM = 22

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixels


@dataclass
class Dataset:
    """Immutable-by-convention sample store with named index splits."""

    name: str
    features: np.ndarray          # [n, d] float64
    targets: np.ndarray           # [n, L] 0/1 (multilabel) or [n] ints (multiclass)
    task: str                     # "multilabel" | "multiclass"
    splits: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.size == 0:
            raise ValueError(f"features must be a nonempty [n, d] matrix, "
                             f"got shape {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features must be finite")
        n = self.features.shape[0]
        if self.task == "multilabel":
            self.targets = np.asarray(self.targets)
            if self.targets.ndim != 2 or self.targets.shape[0] != n:
                raise ValueError(f"multilabel targets must be [n, L], got {self.targets.shape}")
            if not np.isin(self.targets, (0, 1)).all():
                raise ValueError("multilabel targets must be 0/1")
            self.targets = self.targets.astype(np.int64)
        elif self.task == "multiclass":
            self.targets = np.asarray(self.targets)
            if self.targets.shape != (n,):
                raise ValueError(f"class targets must be [n], got {self.targets.shape}")
            if not np.issubdtype(self.targets.dtype, np.integer) or self.targets.min() < 0:
                raise ValueError("class targets must be nonnegative integers")
            self.targets = self.targets.astype(np.int64)
        else:
            raise ValueError(f"unknown task {self.task!r}")
        seen = np.concatenate([np.asarray(v, dtype=np.int64) for v in self.splits.values()]) \
            if self.splits else np.empty(0, dtype=np.int64)
        if seen.size != n or np.unique(seen).size != n or \
                (seen.size and (seen.min() < 0 or seen.max() >= n)):
            raise ValueError("splits must be disjoint index sets covering all samples")
        self.splits = {k: np.asarray(v, dtype=np.int64) for k, v in self.splits.items()}

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_outputs(self) -> int:
        if self.task == "multilabel":
            return self.targets.shape[1]
        return int(self.targets.max()) + 1


def _split_indices(n: int, fractions, seed: int) -> dict:
    """Seeded permutation split; fraction keys in (train, val[, test]) order."""
    names = ("train", "val", "test")[: len(fractions)]
    if not np.isclose(sum(fractions), 1.0):
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    perm = np.random.default_rng([seed, _SPLIT_STREAM]).permutation(n)
    counts = [int(round(f * n)) for f in fractions[:-1]]
    counts.append(n - sum(counts))
    out, start = {}, 0
    for name, c in zip(names, counts):
        out[name] = np.sort(perm[start:start + c])
        start += c
    return out


def from_arrays(features, targets, task: str, *, name: str = "arrays", seed: int = 0,
                fractions=(0.7, 0.15, 0.15)) -> Dataset:
    """Wrap in-memory arrays with a seeded train/val(/test) split."""
    features = np.asarray(features, dtype=np.float64)
    return Dataset(name, features, targets, task,
                   _split_indices(features.shape[0], fractions, seed), seed)


def _read_idx(path, expect_magic: int, expect_dims: int):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated before magic (offset 0)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x} at offset 0, "
                         f"expected 0x{expect_magic:08x}")
    header = 4 + 4 * expect_dims
    if len(raw) < header:
        raise ValueError(f"{path}: truncated header, need {header} bytes")
    dims = struct.unpack(f">{expect_dims}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) != header + count:
        raise ValueError(f"{path}: expected {header + count} bytes for dims {dims}, "
                         f"got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, *, name: str = "idx", seed: int = 0,
             val_fraction: float = 0.2) -> Dataset:
    """MNIST-style IDX pair: images scaled to [0, 1] and flattened, labels as
    class indices, with a seeded train/val split."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    splits = _split_indices(feats.shape[0], (1.0 - val_fraction, val_fraction), seed)
    return Dataset(name, feats, labels.astype(np.int64), "multiclass", splits, seed)


def load_cifar10_binary(train_paths, test_path=None, *, name: str = "cifar10",
                        seed: int = 0, grayscale: bool = False) -> Dataset:
    """CIFAR-10 binary batches (3073-byte records: label + RGB pixel block),
    with a random 80-20 train-validation split of the training records.
    ``grayscale`` averages the three channel planes down to 1024 features."""
    def read_batch(path):
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise ValueError(f"{path}: size {len(raw)} is not a multiple of "
                             f"{CIFAR_RECORD_BYTES}-byte records")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = rec[:, 0].astype(np.int64)
        if labels.max() > 9:
            raise ValueError(f"{path}: label byte {labels.max()} out of range 0..9")
        pixels = rec[:, 1:].astype(np.float64) / 255.0
        if grayscale:
            pixels = pixels.reshape(-1, 3, 1024).mean(axis=1)
        return pixels, labels

    if isinstance(train_paths, (str, Path)):
        train_paths = [train_paths]
    parts = [read_batch(p) for p in train_paths]
    feats = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    n_train = feats.shape[0]
    perm = np.random.default_rng([seed, _SPLIT_STREAM]).permutation(n_train)
    cut = int(round(0.8 * n_train))
    splits = {"train": np.sort(perm[:cut]), "val": np.sort(perm[cut:])}
    if test_path is not None:
        tf, tl = read_batch(test_path)
        splits["test"] = np.arange(n_train, n_train + tf.shape[0])
        feats = np.concatenate([feats, tf])
        labels = np.concatenate([labels, tl])
    return Dataset(name, feats, labels, "multiclass", splits, seed)


def gen_max_affine(n: int, d: int, k_pieces: int, tags: int, seed: int = 0, *,
                   support: int | None = None, pool: int | None = None,
                   name: str = "max_affine", fractions=(0.7, 0.15, 0.15)) -> Dataset:
    """Synthetic multilabel benchmark: each tag is 1 where the max of
    k_pieces random affine functions of the features exceeds its median, so
    every tag is balanced by construction and realizable by a max-plus block.

    Each affine piece reads only `support` randomly chosen coordinates
    (default max(2, d // 16)), and the pieces are drawn from a shared
    dictionary of `pool` candidates (default min(32, max(tags, k_pieces + 1));
    0 disables sharing). Both choices keep the ground truth compactly
    describable the way learned feature spaces tend to be: few primitive
    features, reused across many outputs.
    """
    if min(n, d, k_pieces, tags) < 1:
        raise ValueError("n, d, k_pieces, tags must all be positive")
    if support is None:
        support = max(2, d // 16)
    if not 1 <= support <= d:
        raise ValueError(f"support must be in [1, {d}], got {support}")
    if pool is None:
        pool = min(32, max(tags, k_pieces + 1))
    if pool and pool < k_pieces:
        raise ValueError(f"pool must be 0 or >= k_pieces, got {pool}")
    rng = np.random.default_rng([seed, _GEN_STREAM])
    X = rng.standard_normal((n, d))

    def draw_pieces(count):
        W = np.zeros((count, d))
        for p in range(count):
            cols = rng.choice(d, size=support, replace=False)
            W[p, cols] = rng.standard_normal(support) / np.sqrt(support)
        return W, 0.1 * rng.standard_normal(count)

    shared_W, shared_c = draw_pieces(pool) if pool else (None, None)
    Y = np.empty((n, tags), dtype=np.int64)
    for t in range(tags):
        for _ in range(100):
            if pool:
                pick = rng.choice(pool, size=k_pieces, replace=False)
                W, c = shared_W[pick], shared_c[pick]
            else:
                W, c = draw_pieces(k_pieces)
            vals = (X @ W.T + c).max(axis=1)
            if np.ptp(vals) > 0:
                break
        else:
            raise RuntimeError(f"tag {t}: could not draw a non-constant max-affine function")
        Y[:, t] = vals > np.median(vals)
    return Dataset(name, X, Y, "multilabel", _split_indices(n, fractions, seed), seed)


def save_features_csv(path, dataset: Dataset) -> None:
    """Write features and targets with a schema header: feature columns
    f0..f{d-1}, then `label` (multiclass) or tag_0..tag_{L-1} (multilabel)."""
    d = dataset.n_features
    header = [f"f{j}" for j in range(d)]
    if dataset.task == "multiclass":
        header.append("label")
    else:
        header += [f"tag_{j}" for j in range(dataset.targets.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(dataset.n_samples):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.task == "multiclass":
                row.append(str(int(dataset.targets[i])))
            else:
                row += [str(int(v)) for v in dataset.targets[i]]
            w.writerow(row)


def load_features_csv(path, *, name: str | None = None, seed: int = 0,
                      fractions=(0.7, 0.15, 0.15)) -> Dataset:
    """Read a feature CSV written by `save_features_csv` (or any file with
    the same schema): a `label` column makes it multiclass, `tag_*` columns
    make it multilabel, all other columns are features."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    tag_cols = [j for j, h in enumerate(header) if h.startswith("tag_")]
    label_cols = [j for j, h in enumerate(header) if h == "label"]
    if label_cols and tag_cols:
        raise ValueError(f"{path}: both `label` and `tag_*` target columns present")
    if not label_cols and not tag_cols:
        raise ValueError(f"{path}: no target column (`label` or `tag_*`) in header")
    target_cols = label_cols or tag_cols
    feature_cols = [j for j in range(len(header)) if j not in target_cols]
    if not feature_cols:
        raise ValueError(f"{path}: no feature columns")

    def cell(row_i, row, j):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {row_i + 2} has {len(row)} cells, "
                             f"expected {len(header)}")
        try:
            return float(row[j])
        except ValueError:
            raise ValueError(f"{path}: row {row_i + 2}, column {header[j]!r}: "
                             f"non-numeric cell {row[j]!r}") from None

    feats = np.array([[cell(i, r, j) for j in feature_cols] for i, r in enumerate(rows)])
    raw_targets = np.array([[cell(i, r, j) for j in target_cols] for i, r in enumerate(rows)])
    if label_cols:
        targets = raw_targets[:, 0].astype(np.int64)
        task = "multiclass"
    else:
        targets = raw_targets.astype(np.int64)
        if not np.isin(raw_targets, (0.0, 1.0)).all():
            raise ValueError(f"{path}: tag columns must be 0/1")
        task = "multilabel"
    return Dataset(name or Path(path).stem, feats, targets, task,
                   _split_indices(feats.shape[0], fractions, seed), seed)
