"""Ranking and classification metrics, exact by construction.

roc_auc is the Mann-Whitney statistic (ties count one half), pr_auc is
average precision (step integral of the precision-recall curve with tied
scores grouped), accuracy breaks argmax ties toward the lowest class index.
Macro variants average over label columns, skipping labels for which the
metric is undefined; seed aggregation reports mean and standard error.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "UndefinedMetricError",
    "roc_auc",
    "pr_auc",
    "accuracy",
    "roc_auc_macro",
    "pr_auc_macro",
    "aggregate_runs",
    "group_average_scores",
]


class UndefinedMetricError(ValueError):
    """The metric has no value on this input (e.g. single-class labels)."""


def _check_scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.shape != s.shape:
        raise ValueError(f"scores and labels must be equal-length vectors, "
                         f"got {s.shape} and {y.shape}")
    if s.size == 0:
        raise ValueError("empty input")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return s, y.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Probability that a uniformly random positive outranks a uniformly
    random negative, ties counted 1/2."""
    s, y = _check_scores_labels(scores, labels)
    npos = int(y.sum())
    nneg = y.size - npos
    if npos == 0 or nneg == 0:
        raise UndefinedMetricError("roc_auc needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    _, inverse, counts = np.unique(s[order], return_inverse=True, return_counts=True)
    # 1-based rank of each tie group's members, averaged within the group.
    avg_rank = np.cumsum(counts) - (counts - 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = avg_rank[inverse]
    u = ranks[y == 1].sum() - npos * (npos + 1) / 2.0
    return float(u / (npos * nneg))


def pr_auc(scores, labels) -> float:
    """Average precision: sum over descending distinct scores of
    (recall gain) * (precision at that threshold)."""
    s, y = _check_scores_labels(scores, labels)
    npos = int(y.sum())
    if npos == 0:
        raise UndefinedMetricError("pr_auc needs at least one positive")
    desc = np.argsort(-s, kind="stable")
    ys = y[desc]
    ss = s[desc]
    tp = np.cumsum(ys)
    k = np.arange(1, s.size + 1)
    ends = np.flatnonzero(np.append(ss[1:] != ss[:-1], True))
    tp_end = tp[ends]
    gain = np.diff(np.concatenate(([0], tp_end)))
    return float(np.sum(gain / npos * (tp_end / k[ends])))


def accuracy(logits, labels) -> float:
    """Argmax match rate over sample-major logits [n, c]; ties resolve to the
    lowest class index."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.ndim != 2:
        raise ValueError(f"logits must be [n, c], got shape {z.shape}")
    if y.shape != (z.shape[0],):
        raise ValueError(f"labels shape {y.shape} does not match {z.shape[0]} samples")
    return float((z.argmax(axis=1) == y).mean())


def _macro(metric, scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 2 or y.shape != s.shape:
        raise ValueError(f"expected equal [n, labels] matrices, got {s.shape} and {y.shape}")
    values = []
    for j in range(s.shape[1]):
        try:
            values.append(metric(s[:, j], y[:, j]))
        except UndefinedMetricError:
            continue
    if not values:
        raise UndefinedMetricError("metric undefined for every label")
    return float(np.mean(values))


def roc_auc_macro(scores, labels) -> float:
    """Mean roc_auc over label columns, skipping single-class labels."""
    return _macro(roc_auc, scores, labels)


def pr_auc_macro(scores, labels) -> float:
    """Mean pr_auc over label columns, skipping labels without positives."""
    return _macro(pr_auc, scores, labels)


def aggregate_runs(reports) -> dict:
    """Per-metric mean and standard error over runs.

    ``reports`` is a sequence of metric mappings (or objects with a .metrics
    mapping). All runs must report the same metric set. SE = sd / sqrt(n)
    with the n-1 variance; None when n = 1.
    """
    maps = [r.metrics if hasattr(r, "metrics") else dict(r) for r in reports]
    if not maps:
        raise ValueError("no runs to aggregate")
    keys = list(maps[0])
    for i, m in enumerate(maps[1:], start=1):
        if set(m) != set(keys):
            raise ValueError(f"run {i} reports metrics {sorted(m)}, expected {sorted(keys)}")
    out = {}
    for key in keys:
        vals = np.array([float(m[key]) for m in maps])
        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
        out[key] = (float(vals.mean()), se)
    return out


def group_average_scores(scores, groups):
    """Average score rows that share a group id (e.g. chunks of one item).

    Returns (group_ids, averaged) with group_ids sorted ascending and
    averaged[i] the mean of scores rows whose group equals group_ids[i].
    """
    s = np.asarray(scores, dtype=np.float64)
    g = np.asarray(groups)
    if g.shape != (s.shape[0],):
        raise ValueError(f"groups shape {g.shape} does not match {s.shape[0]} rows")
    ids, inverse = np.unique(g, return_inverse=True)
    sums = np.zeros((ids.size,) + s.shape[1:])
    np.add.at(sums, inverse, s)
    counts = np.bincount(inverse, minlength=ids.size).astype(np.float64)
    counts = counts.reshape((-1,) + (1,) * (s.ndim - 1))
    return ids, sums / counts
