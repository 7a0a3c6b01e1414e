"""Classification-head architectures built on the autodiff engine.

Five variants share a two-to-three layer shape:

  relu         linear(d_in -> d_h, bias) -> [BN] -> ReLU -> linear(d_h -> d_out, bias)
  maxout       linear(d_in -> P*d_h, bias) -> [BN] -> group-max over P -> linear(d_h -> d_out, bias)
  zhang        linear(d_in -> d_h, bias) -> [BN] -> ReLU -> max-plus(d_out x d_h, dense, bias)
  dense_morph  linear(d_in -> d_h, no bias) -> [BN] -> max-plus(d_h x d_h, all active, bias) -> linear(d_h -> d_out, bias)
  sparse_morph dense_morph with the max-plus mask restricted to exactly P*d_h active entries

Active max-plus weights and biases initialize to zero, so a fresh morph layer
is a sparse max-pool floored at zero. Linear weights draw uniformly from
+-1/sqrt(fan_in); linear biases start at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    TropicalParam,
    UndefinedOutputError,
    batchnorm,
    group_max,
    linear,
    maxplus,
    relu,
)

__all__ = [
    "VARIANTS",
    "HeadSpec",
    "ModelParams",
    "build_head",
    "sparse_init",
    "forward",
    "expected_census",
    "validate_params",
]

VARIANTS = ("relu", "maxout", "zhang", "dense_morph", "sparse_morph")

_INIT_STREAM = 11  # rng stream id for parameter initialization


@dataclass(frozen=True)
class HeadSpec:
    """Declarative description of one head; `build_head` turns it into parameters."""

    variant: str
    d_in: int
    d_hidden: int
    d_out: int
    pooling: int = 2
    batchnorm: bool = True
    seed: int = 0
    # Force >= 1 active weight per sparse row (skews the degree distribution; default off,
    # rows without weights fall back to their bias).
    ensure_row_active: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        for field in ("d_in", "d_hidden", "d_out", "pooling"):
            v = getattr(self, field)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{field} must be a positive integer, got {v!r}")
        if self.variant == "sparse_morph" and self.pooling * self.d_hidden > self.d_hidden ** 2:
            raise ValueError(
                f"sparse budget P*d_hidden = {self.pooling * self.d_hidden} exceeds "
                f"matrix size {self.d_hidden ** 2}"
            )

    def with_seed(self, seed: int) -> "HeadSpec":
        return replace(self, seed=seed)


def expected_census(spec: HeadSpec) -> int:
    """Closed-form trainable-parameter count (linear + morphological; BN excluded)."""
    d_in, d_h, d_out, p = spec.d_in, spec.d_hidden, spec.d_out, spec.pooling
    if spec.variant in ("relu", "zhang"):
        return d_in * d_h + d_h + d_h * d_out + d_out
    if spec.variant == "maxout":
        return p * d_in * d_h + p * d_h + d_h * d_out + d_out
    if spec.variant == "dense_morph":
        return d_in * d_h + d_h * d_h + d_h + d_h * d_out + d_out
    return d_in * d_h + p * d_h + d_h + d_h * d_out + d_out


def sparse_init(n_out: int, pooling: int, seed, ensure_row_active: bool = False) -> np.ndarray:
    """Activity mask with exactly pooling*n_out cells active, drawn uniformly
    without replacement from the n_out x n_out grid. Row degrees vary with
    mean = pooling; a row may end up empty (its unit is then bias-only).
    """
    if pooling * n_out > n_out * n_out:
        raise ValueError(f"budget {pooling * n_out} exceeds grid size {n_out * n_out}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = np.zeros((n_out, n_out), dtype=bool)
    budget = pooling * n_out
    if ensure_row_active:
        cols = rng.integers(0, n_out, size=n_out)
        mask[np.arange(n_out), cols] = True
        budget -= n_out
        pool = np.flatnonzero(~mask.ravel())
        mask.ravel()[rng.choice(pool, size=budget, replace=False)] = True
    else:
        mask.ravel()[rng.choice(n_out * n_out, size=budget, replace=False)] = True
    return mask


class ModelParams:
    """Parameter store for one head: plain tensors, tropical layers, pruning
    masks for linear weight matrices (all-active until pruned), and batch-norm
    running statistics.
    """

    __slots__ = ("spec", "tensors", "tropical", "linear_masks", "running")

    def __init__(self, spec: HeadSpec, tensors: dict, tropical: dict,
                 linear_masks: dict, running: dict):
        self.spec = spec
        self.tensors = tensors
        self.tropical = tropical
        self.linear_masks = linear_masks
        self.running = running

    def census(self, include_batchnorm: bool = False) -> int:
        """Count of active trainable parameters. Linear biases always count;
        masked linear weights and inactive tropical entries do not."""
        total = 0
        for name, t in self.tensors.items():
            if name in ("bn.gamma", "bn.beta") and not include_batchnorm:
                continue
            mask = self.linear_masks.get(name)
            total += t.data.size if mask is None else int(mask.sum())
        for p in self.tropical.values():
            total += p.active_count()
        return total

    def trainable(self):
        """Yield (name, param, mask, decay) in a fixed order. `mask` gates both
        gradients and optimizer updates; `decay` marks weight-decay targets
        (linear weight matrices only)."""
        for name, t in self.tensors.items():
            mask = self.linear_masks.get(name)
            yield name, t, mask, mask is not None
        for name, p in self.tropical.items():
            yield name, p, p.active, False

    def zero_grads(self) -> None:
        for _, p, _, _ in self.trainable():
            p.grad = None

    def snapshot(self) -> dict:
        """Copy of every mutable float array (weights and running stats), for
        best-model bookkeeping during training. Masks are not included; they
        do not change within a run."""
        state = {name: t.data.copy() for name, t in self.tensors.items()}
        state.update({name: p.values.copy() for name, p in self.tropical.items()})
        state.update({name: arr.copy() for name, arr in self.running.items()})
        return state

    def restore(self, state: dict) -> None:
        for name, t in self.tensors.items():
            t.data[...] = state[name]
        for name, p in self.tropical.items():
            p.values[...] = state[name]
        for name, arr in self.running.items():
            arr[...] = state[name]

    def copy(self) -> "ModelParams":
        tensors = {n: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                   for n, t in self.tensors.items()}
        tropical = {n: p.copy() for n, p in self.tropical.items()}
        masks = {n: m.copy() for n, m in self.linear_masks.items()}
        running = {n: a.copy() for n, a in self.running.items()}
        return ModelParams(self.spec, tensors, tropical, masks, running)

    def undefined_rows(self) -> dict:
        """Per tropical layer, rows with no active weight and no active bias."""
        bad = {}
        weights = {n: p for n, p in self.tropical.items() if not n.endswith(".b")}
        for name, w in weights.items():
            rows = ~w.active.any(axis=1)
            bias = self.tropical.get(name[:-2] + ".b")
            if bias is not None:
                rows &= ~bias.active[:, 0]
            if rows.any():
                bad[name] = np.flatnonzero(rows).tolist()
        return bad

    def __repr__(self) -> str:
        return f"ModelParams(variant={self.spec.variant!r}, census={self.census()})"


def validate_params(model: ModelParams) -> None:
    """Reject models with undefined outputs: a max-plus row whose weights are
    all inactive and whose bias is inactive or absent has no value."""
    bad = model.undefined_rows()
    if bad:
        detail = ", ".join(f"{name} rows {rows}" for name, rows in bad.items())
        raise UndefinedOutputError(f"undefined max-plus outputs: {detail}")


def _uniform_linear(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    bound = 1.0 / np.sqrt(cols)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def build_head(spec: HeadSpec) -> ModelParams:
    """Materialize parameters for `spec` and verify the census closed form."""
    rng = np.random.default_rng([spec.seed, _INIT_STREAM])
    d_in, d_h, d_out, p = spec.d_in, spec.d_hidden, spec.d_out, spec.pooling
    tensors: dict = {}
    tropical: dict = {}
    masks: dict = {}
    running: dict = {}

    first_rows = p * d_h if spec.variant == "maxout" else d_h
    tensors["lin1.W"] = _uniform_linear(rng, first_rows, d_in)
    masks["lin1.W"] = np.ones((first_rows, d_in), dtype=bool)
    if spec.variant in ("relu", "maxout", "zhang"):
        tensors["lin1.b"] = Tensor(np.zeros(first_rows), requires_grad=True)

    if spec.batchnorm:
        tensors["bn.gamma"] = Tensor(np.ones(first_rows), requires_grad=True)
        tensors["bn.beta"] = Tensor(np.zeros(first_rows), requires_grad=True)
        running["bn.mean"] = np.zeros(first_rows)
        running["bn.var"] = np.ones(first_rows)

    if spec.variant == "zhang":
        tropical["morph.W"] = TropicalParam(np.zeros((d_out, d_h)))
        tropical["morph.b"] = TropicalParam(np.zeros((d_out, 1)))
    elif spec.variant in ("dense_morph", "sparse_morph"):
        active = None
        if spec.variant == "sparse_morph":
            active = sparse_init(d_h, p, rng, spec.ensure_row_active)
        tropical["morph.W"] = TropicalParam(np.zeros((d_h, d_h)), active)
        tropical["morph.b"] = TropicalParam(np.zeros((d_h, 1)))

    if spec.variant != "zhang":
        tensors["lin2.W"] = _uniform_linear(rng, d_out, d_h)
        tensors["lin2.b"] = Tensor(np.zeros(d_out), requires_grad=True)
        masks["lin2.W"] = np.ones((d_out, d_h), dtype=bool)

    model = ModelParams(spec, tensors, tropical, masks, running)
    got, want = model.census(), expected_census(spec)
    if got != want:
        raise AssertionError(f"census mismatch for {spec.variant}: built {got}, formula {want}")
    validate_params(model)
    return model


def _maxplus_margin(w: TropicalParam, bias, y: Tensor) -> float:
    # Smallest winner-vs-runner-up gap across all units and samples; candidates
    # are the active weight sums plus the bias. Rows with a single candidate
    # contribute nothing.
    cand = np.where(w.active, w.values, -np.inf)[:, :, None] + y.data[None, :, :]
    if bias is not None:
        bvals = np.where(bias.active[:, 0], bias.values[:, 0], -np.inf)
        cand = np.concatenate([cand, np.broadcast_to(
            bvals[:, None, None], (cand.shape[0], 1, cand.shape[2]))], axis=1)
    top2 = -np.partition(-cand, 1, axis=1)[:, :2, :]
    gaps = top2[:, 0, :] - top2[:, 1, :]
    gaps = gaps[np.isfinite(gaps)]
    return float(gaps.min()) if gaps.size else np.inf


def _groupmax_margin(x: Tensor, pooling: int) -> float:
    if pooling < 2:
        return np.inf
    rows, b = x.data.shape
    stacked = np.sort(x.data.reshape(pooling, rows // pooling, b), axis=0)
    return float((stacked[-1] - stacked[-2]).min())


def forward(model: ModelParams, x, tape: Tape | None = None, *,
            training: bool = False, allow_bottom: bool = False,
            margins: list | None = None) -> Tensor:
    """Compute logits [d_out x b]. Pass `tape` to enable backward. `margins`,
    when given, collects the distance to the nearest max-type tie per op
    (gradient-check plumbing)."""
    if tape is None:
        tape = Tape()
    if not isinstance(x, Tensor):
        x = Tensor(x)
    spec = model.spec
    t, tr = model.tensors, model.tropical

    h = linear(tape, t["lin1.W"], x, t.get("lin1.b"), model.linear_masks["lin1.W"])
    if spec.batchnorm:
        h = batchnorm(tape, h, t["bn.gamma"], t["bn.beta"],
                      model.running["bn.mean"], model.running["bn.var"],
                      training=training)

    if spec.variant in ("relu", "zhang"):
        if margins is not None:
            margins.append(float(np.abs(h.data).min()))
        h = relu(tape, h)
    elif spec.variant == "maxout":
        if margins is not None:
            margins.append(_groupmax_margin(h, spec.pooling))
        h = group_max(tape, h, spec.pooling)
    else:
        if margins is not None:
            margins.append(_maxplus_margin(tr["morph.W"], tr["morph.b"], h))
        h = maxplus(tape, tr["morph.W"], tr["morph.b"], h, allow_bottom=allow_bottom)

    if spec.variant == "zhang":
        if margins is not None:
            margins.append(_maxplus_margin(tr["morph.W"], tr["morph.b"], h))
        return maxplus(tape, tr["morph.W"], tr["morph.b"], h, allow_bottom=allow_bottom)
    return linear(tape, t["lin2.W"], h, t["lin2.b"], model.linear_masks["lin2.W"])
