"""L1 unstructured pruning with per-variant ratio equalization.

The last linear layer prunes at ratio r2 and the remaining layers at r1,
with adjustments that equalize remaining-parameter counts across variants:

  relu          lin1 at r1, lin2 at r2
  zhang         lin1 at r1, output morph weights at r2
  maxout        lin1 at r1' = 1 - (1-r1)/2 plus (P-1)*d_h extra weights
                (its bias surplus over the relu head), lin2 at r2
  dense_morph   lin1 and morph weights at r1', lin2 at r2
  sparse_morph  lin1 at r1 plus P*d_h extra weights (the morph layer's
                active budget), morph untouched, lin2 at r2

Per layer, pruned = floor(ratio * count) + extra, i.e. remaining =
ceil((1-ratio) * count) - extra; biases are never pruned. Ratios are
snapped to exact rationals before any count arithmetic so that e.g.
floor(0.98 * 25600) is 25088, not the binary-float neighbor 25087.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .autodiff import TropicalParam
from .heads import HeadSpec, ModelParams
from .optim import evaluate
from .runio import RunReport

__all__ = [
    "PrunePlan",
    "l1_prune_linear",
    "l1_prune_morph",
    "build_prune_plan",
    "remaining_param_count",
    "expected_remaining",
    "prune_model",
    "prune_and_eval",
]


def _exact(ratio: float) -> Fraction:
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"pruning ratio must be in [0, 1), got {ratio}")
    return Fraction(ratio).limit_denominator(10 ** 6)


def _pruned_count(ratio, count: int, extra: int = 0) -> int:
    k = int(_exact(float(ratio)) * count) + extra
    if k < 0 or k > count:
        raise ValueError(f"cannot prune {k} of {count} entries")
    return k


def l1_prune_linear(weights: np.ndarray, ratio: float, extra: int = 0) -> np.ndarray:
    """Mask that drops the floor(ratio*count)+extra smallest-|w| entries
    (ties to the lowest flat index). Refuses to empty the layer."""
    w = np.asarray(weights, dtype=np.float64)
    if extra < 0:
        raise ValueError(f"extra must be nonnegative, got {extra}")
    k = _pruned_count(ratio, w.size, extra)
    if k >= w.size:
        raise ValueError(f"pruning all {w.size} entries of a layer is not allowed")
    mask = np.ones(w.shape, dtype=bool)
    order = np.argsort(np.abs(w), axis=None, kind="stable")
    mask.ravel()[order[:k]] = False
    return mask


def l1_prune_morph(values: np.ndarray, active: np.ndarray, ratio: float) -> np.ndarray:
    """New activity mask with floor(ratio * active_count) of the currently
    active entries deactivated, smallest |value| first (ties to the lowest
    flat index). Deactivation is the mask form of the semiring's -inf."""
    values = np.asarray(values, dtype=np.float64)
    active = np.asarray(active, dtype=bool)
    if active.shape != values.shape:
        raise ValueError("active mask shape does not match values")
    act_idx = np.flatnonzero(active.ravel())
    k = _pruned_count(ratio, act_idx.size)
    order = np.argsort(np.abs(values.ravel()[act_idx]), kind="stable")
    out = active.copy()
    out.ravel()[act_idx[order[:k]]] = False
    return out


@dataclass
class PrunePlan:
    """Per-layer effective ratios/extras for one (r1, r2) pair, plus the
    closed-form remaining counts. ``masks`` is filled on first application
    so that re-applying the plan is idempotent."""

    variant: str
    r1: float
    r2: float
    linear: dict                      # name -> (ratio, extra)
    morph: dict                       # name -> ratio
    expected_remaining: int           # variant-exact closed form
    target_remaining: int             # canonical (relu-shape) table value
    masks: dict | None = field(default=None, compare=False)


def remaining_param_count(d_in: int, d_hidden: int, d_out: int, r1, r2) -> int:
    """Canonical remaining count all variants are equalized toward:
    ceil((1-r1)*d_in*d_h) + d_h + ceil((1-r2)*d_h*d_out) + d_out."""
    w1, w2 = d_in * d_hidden, d_hidden * d_out
    return (w1 - _pruned_count(r1, w1)) + d_hidden + (w2 - _pruned_count(r2, w2)) + d_out


def _halved(r1) -> Fraction:
    return 1 - (1 - _exact(float(r1))) / 2


def expected_remaining(spec: HeadSpec, r1, r2) -> int:
    """Variant-exact remaining count under the plan this module builds."""
    d_in, d_h, d_out, p = spec.d_in, spec.d_hidden, spec.d_out, spec.pooling
    w2 = d_h * d_out
    last = (w2 - _pruned_count(r2, w2)) + d_out
    if spec.variant in ("relu", "zhang"):
        w1 = d_in * d_h
        return (w1 - _pruned_count(r1, w1)) + d_h + last
    if spec.variant == "sparse_morph":
        w1 = d_in * d_h
        return (w1 - _pruned_count(r1, w1, p * d_h)) + p * d_h + d_h + last
    r1p = _halved(r1)
    if spec.variant == "maxout":
        w1 = p * d_in * d_h
        return (w1 - _pruned_count(r1p, w1, (p - 1) * d_h)) + p * d_h + last
    w1, wm = d_in * d_h, d_h * d_h
    return (w1 - _pruned_count(r1p, w1)) + (wm - _pruned_count(r1p, wm)) + d_h + last


def build_prune_plan(spec: HeadSpec, r1: float, r2: float) -> PrunePlan:
    """Layer-by-layer pruning recipe for one head variant."""
    r1, r2 = float(r1), float(r2)
    _exact(r1)  # range checks
    _exact(r2)
    d_h, p = spec.d_hidden, spec.pooling
    if spec.variant == "relu":
        linear = {"lin1.W": (r1, 0), "lin2.W": (r2, 0)}
        morph = {}
    elif spec.variant == "zhang":
        linear = {"lin1.W": (r1, 0)}
        morph = {"morph.W": r2}
    elif spec.variant == "maxout":
        linear = {"lin1.W": (float(_halved(r1)), (p - 1) * d_h), "lin2.W": (r2, 0)}
        morph = {}
    elif spec.variant == "dense_morph":
        r1p = float(_halved(r1))
        linear = {"lin1.W": (r1p, 0), "lin2.W": (r2, 0)}
        morph = {"morph.W": r1p}
    else:
        linear = {"lin1.W": (r1, p * d_h), "lin2.W": (r2, 0)}
        morph = {}
    return PrunePlan(spec.variant, r1, r2, linear, morph,
                     expected_remaining(spec, r1, r2),
                     remaining_param_count(spec.d_in, d_h, spec.d_out, r1, r2))


def prune_model(model: ModelParams, plan: PrunePlan) -> ModelParams:
    """Apply the plan's masks (computing them from the model's weights on
    first use) and return a new pruned model; the input is untouched."""
    if plan.variant != model.spec.variant:
        raise ValueError(f"plan for {plan.variant!r} applied to {model.spec.variant!r}")
    if plan.masks is None:
        masks = {}
        for name, (ratio, extra) in plan.linear.items():
            masks[name] = l1_prune_linear(model.tensors[name].data, ratio, extra) \
                & model.linear_masks[name]
        for name, ratio in plan.morph.items():
            p = model.tropical[name]
            masks[name] = l1_prune_morph(p.values, p.active, ratio)
        plan.masks = masks
    out = model.copy()
    for name, mask in plan.masks.items():
        if name in out.linear_masks:
            out.linear_masks[name] &= mask
        else:
            p = out.tropical[name]
            out.tropical[name] = TropicalParam(p.values, p.active & mask)
    return out


def prune_and_eval(model: ModelParams, plan: PrunePlan, dataset,
                   split: str = "test") -> RunReport:
    """One-shot pruning (no fine-tuning) followed by evaluation. Undefined
    max-plus rows are reported as a degenerate-model flag; their outputs are
    clamped so metrics can still be computed."""
    pruned = prune_model(model, plan)
    degenerate = bool(pruned.undefined_rows())
    metrics = evaluate(pruned, dataset, split, allow_bottom=True)
    return RunReport(
        name=f"{dataset.name}/{model.spec.variant}/prune_r1={plan.r1}_r2={plan.r2}",
        variant=model.spec.variant,
        seed=model.spec.seed,
        task=dataset.task,
        metrics=metrics,
        param_census=pruned.census(),
        expected_census=plan.expected_remaining,
        r1=plan.r1,
        r2=plan.r2,
        degenerate=degenerate,
    )
