import struct
import time

import numpy as np
import pytest

from maxplusnn.datasets import gen_max_affine
from maxplusnn.heads import HeadSpec, build_head
from maxplusnn.optim import TrainConfig, TrainPhase, evaluate, train
from maxplusnn.pruning import build_prune_plan, prune_model

TREND_SEEDS = (0, 1, 2, 3, 4)
TREND_VARIANTS = ("relu", "dense_morph", "sparse_morph")

# Frozen reference: remaining parameter counts for the 512->512->50 head,
# keyed (r2, r1). Hand-checked, e.g. (0.8, 0.8): ceil(0.2*262144) + 512
# + ceil(0.2*25600) + 50 = 52429 + 512 + 5120 + 50 = 58111.
KNOWN_COUNTS_512_512_50 = {
    (0.8, 0.8): 58111, (0.8, 0.9): 31897, (0.8, 0.95): 18790, (0.8, 0.98): 10925,
    (0.9, 0.8): 55551, (0.9, 0.9): 29337, (0.9, 0.95): 16230, (0.9, 0.98): 8365,
    (0.95, 0.8): 54271, (0.95, 0.9): 28057, (0.95, 0.95): 14950, (0.95, 0.98): 7085,
    (0.98, 0.8): 53503, (0.98, 0.9): 27289, (0.98, 0.95): 14182, (0.98, 0.98): 6317,
}

# Frozen reference: remaining counts for the 256->512->10 head, keyed (r2, r1).
KNOWN_COUNTS_256_512_10 = {
    (0.7, 0.7): 41380, (0.7, 0.8): 28273, (0.7, 0.9): 15166,
    (0.8, 0.7): 40868, (0.8, 0.8): 27761, (0.8, 0.9): 14654,
    (0.9, 0.7): 40356, (0.9, 0.8): 27249, (0.9, 0.9): 14142,
    (0.95, 0.7): 40100, (0.95, 0.8): 26993, (0.95, 0.9): 13886,
}


def trend_config(seed: int) -> TrainConfig:
    return TrainConfig(phases=(TrainPhase("adam", 1e-3, 30),),
                       weight_decay=1e-3, batch_size=128, seed=seed)


def trend_spec(variant: str, seed: int) -> HeadSpec:
    return HeadSpec(variant=variant, d_in=64, d_hidden=128, d_out=50,
                    batchnorm=variant != "dense_morph", seed=seed)


@pytest.fixture(scope="session")
def trend_runs():
    """Train relu, dense_morph, and sparse_morph heads on the synthetic
    benchmark for five seeds, with one-shot pruning at r1 = r2 = 0.9.

    This is the expensive shared fixture behind the degradation-trend and
    convergence acceptance checks; everything downstream reads from it.
    """
    start = time.monotonic()
    runs = {}
    for seed in TREND_SEEDS:
        ds = gen_max_affine(n=20000, d=64, k_pieces=8, tags=50, seed=seed)
        for variant in TREND_VARIANTS:
            spec = trend_spec(variant, seed)
            result = train(build_head(spec), ds, trend_config(seed))
            test_metrics = evaluate(result.model, ds, "test")
            plan = build_prune_plan(spec, 0.9, 0.9)
            pruned = prune_model(result.model, plan)
            pruned_metrics = evaluate(pruned, ds, "test", allow_bottom=True)
            runs[variant, seed] = {
                "result": result,
                "test": test_metrics,
                "pruned": pruned_metrics,
                "curves": result.curves,
            }
    runs["_elapsed_seconds"] = time.monotonic() - start
    return runs


@pytest.fixture()
def tiny_dataset():
    return gen_max_affine(n=600, d=8, k_pieces=2, tags=4, seed=7)


def write_idx_pair(dirpath, images: np.ndarray, labels: np.ndarray):
    """Serialize a (n, rows, cols) uint8 image stack and label vector in the
    big-endian IDX container format; returns (images_path, labels_path)."""
    n, rows, cols = images.shape
    ipath = dirpath / "images.idx"
    lpath = dirpath / "labels.idx"
    with open(ipath, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())
    with open(lpath, "wb") as fh:
        fh.write(struct.pack(">II", 0x801, n))
        fh.write(labels.astype(np.uint8).tobytes())
    return ipath, lpath
