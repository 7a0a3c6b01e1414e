"""Exact rewrites of ReLU and maxout layers as max-plus morphological forms.

A biased ReLU layer max(Ax + b, 0) equals an unbiased linear layer followed
by a zero-biased max-plus layer whose weight matrix is diagonal with values
b. A maxout layer max_p(A_p x + b_p) equals the row-stacked unbiased linear
layer followed by an unbiased max-plus layer whose weight matrix concatenates
the diagonal matrices of the b_p. Both identities are exact: every addition
performed by the rewritten form also occurs in the direct form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, TropicalParam
from .heads import HeadSpec, ModelParams
from .tropical import TropicalMatrix, as_float_matrix, as_float_vector, max_plus_matmul

__all__ = [
    "diag_mp",
    "ReluRewrite",
    "MaxoutRewrite",
    "relu_to_maxplus",
    "maxout_to_maxplus",
    "apply_relu_rewrite",
    "apply_maxout_rewrite",
    "check_relu_equivalence",
    "check_maxout_equivalence",
    "as_morph_head",
]


def diag_mp(v) -> TropicalMatrix:
    """Max-plus diagonal matrix: diagonal active with values v, off-diagonal
    inactive (the semiring's -inf)."""
    v = as_float_vector(v, "v")
    n = v.shape[0]
    return TropicalMatrix(np.diag(v), np.eye(n, dtype=bool))


@dataclass(frozen=True)
class ReluRewrite:
    """max(Ax + b, 0) as: linear @ x, then morph, joined with bias0 = 0."""

    linear: np.ndarray       # [m, k], the unbiased linear weights (A unchanged)
    morph: TropicalMatrix    # [m, m], diag_mp(b)
    bias0: TropicalMatrix    # [m, 1], all-active zeros


@dataclass(frozen=True)
class MaxoutRewrite:
    """max_p(A_p x + b_p) as: stacked linear @ x, then unbiased morph."""

    linear: np.ndarray       # [P*N, k], rows of the A_p stacked piece-major
    morph: TropicalMatrix    # [N, P*N], [diag_mp(b_1) ... diag_mp(b_P)]


def relu_to_maxplus(A, b) -> ReluRewrite:
    A = as_float_matrix(A, "A")
    b = as_float_vector(b, "b")
    if b.shape[0] != A.shape[0]:
        raise ValueError(f"bias length {b.shape[0]} does not match {A.shape[0]} rows")
    m = A.shape[0]
    bias0 = TropicalMatrix(np.zeros((m, 1)), np.ones((m, 1), dtype=bool))
    return ReluRewrite(A.copy(), diag_mp(b), bias0)


def maxout_to_maxplus(A_list, b_list) -> MaxoutRewrite:
    if len(A_list) == 0 or len(A_list) != len(b_list):
        raise ValueError("need equal, nonzero numbers of weight matrices and biases")
    mats = [as_float_matrix(A, f"A_list[{i}]") for i, A in enumerate(A_list)]
    biases = [as_float_vector(b, f"b_list[{i}]") for i, b in enumerate(b_list)]
    n, k = mats[0].shape
    for i, (A, b) in enumerate(zip(mats, biases)):
        if A.shape != (n, k) or b.shape != (n,):
            raise ValueError(f"piece {i} has shape {A.shape}/{b.shape}, expected {(n, k)}/{(n,)}")
    p = len(mats)
    values = np.zeros((n, p * n))
    active = np.zeros((n, p * n), dtype=bool)
    rows = np.arange(n)
    for j, b in enumerate(biases):
        values[rows, j * n + rows] = b
        active[rows, j * n + rows] = True
    return MaxoutRewrite(np.vstack(mats), TropicalMatrix(values, active))


def apply_relu_rewrite(rw: ReluRewrite, x) -> np.ndarray:
    x = as_float_matrix(x, "x")
    prod = max_plus_matmul(rw.morph, rw.linear @ x)
    bias = rw.bias0.values[:, :1]
    # Diagonal morph rows always have one active entry; no bottom handling needed.
    return np.maximum(prod.values, bias)


def apply_maxout_rewrite(rw: MaxoutRewrite, x) -> np.ndarray:
    x = as_float_matrix(x, "x")
    return max_plus_matmul(rw.morph, rw.linear @ x).values


@dataclass(frozen=True)
class EquivReport:
    trials: int
    max_deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def check_relu_equivalence(trials: int = 1000, max_dim: int = 16, seed: int = 0,
                           low: float = -10.0, high: float = 10.0, batch: int = 4,
                           tolerance: float = 1e-12, inject_error: float = 0.0) -> EquivReport:
    """Randomized comparison of max(Ax + b, 0) against its rewritten form.

    ``inject_error`` perturbs the rewritten morph weights by that amount; it
    exists as a negative control for the checker itself.
    """
    rng = np.random.default_rng([seed, 41])
    worst = 0.0
    for _ in range(trials):
        m = int(rng.integers(1, max_dim + 1))
        k = int(rng.integers(1, max_dim + 1))
        A = rng.uniform(low, high, size=(m, k))
        b = rng.uniform(low, high, size=m)
        x = rng.uniform(low, high, size=(k, batch))
        rw = relu_to_maxplus(A, b)
        if inject_error:
            rw = ReluRewrite(rw.linear,
                             TropicalMatrix(rw.morph.values + inject_error, rw.morph.active),
                             rw.bias0)
        direct = np.maximum(A @ x + b[:, None], 0.0)
        worst = max(worst, float(np.abs(direct - apply_relu_rewrite(rw, x)).max()))
    return EquivReport(trials, worst, tolerance)


def check_maxout_equivalence(trials: int = 1000, max_dim: int = 16, max_pieces: int = 3,
                             seed: int = 0, low: float = -10.0, high: float = 10.0,
                             batch: int = 4, tolerance: float = 1e-12,
                             inject_error: float = 0.0) -> EquivReport:
    """Randomized comparison of max_p(A_p x + b_p) against its rewritten form."""
    rng = np.random.default_rng([seed, 42])
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, max_dim + 1))
        k = int(rng.integers(1, max_dim + 1))
        p = int(rng.integers(1, max_pieces + 1))
        A_list = [rng.uniform(low, high, size=(n, k)) for _ in range(p)]
        b_list = [rng.uniform(low, high, size=n) for _ in range(p)]
        x = rng.uniform(low, high, size=(k, batch))
        rw = maxout_to_maxplus(A_list, b_list)
        if inject_error:
            rw = MaxoutRewrite(rw.linear,
                               TropicalMatrix(rw.morph.values + inject_error, rw.morph.active))
        direct = np.stack([A @ x + b[:, None] for A, b in zip(A_list, b_list)]).max(axis=0)
        worst = max(worst, float(np.abs(direct - apply_maxout_rewrite(rw, x)).max()))
    return EquivReport(trials, worst, tolerance)


def as_morph_head(A, b, out_W, out_b) -> ModelParams:
    """Package a ReLU rewrite as trainable head parameters: unbiased linear,
    diagonal max-plus with zero bias, then a linear output layer. The result
    runs under the same forward/backward engine as any built head."""
    rw = relu_to_maxplus(A, b)
    out_W = as_float_matrix(out_W, "out_W")
    out_b = as_float_vector(out_b, "out_b")
    m, k = rw.linear.shape
    if out_W.shape[1] != m or out_b.shape[0] != out_W.shape[0]:
        raise ValueError("output layer shapes do not match the hidden width")
    spec = HeadSpec("dense_morph", d_in=k, d_hidden=m, d_out=out_W.shape[0], batchnorm=False)
    tensors = {
        "lin1.W": Tensor(rw.linear.copy(), requires_grad=True),
        "lin2.W": Tensor(out_W.copy(), requires_grad=True),
        "lin2.b": Tensor(out_b.copy(), requires_grad=True),
    }
    tropical = {
        "morph.W": TropicalParam(rw.morph.values.copy(), rw.morph.active.copy()),
        "morph.b": TropicalParam(np.zeros((m, 1))),
    }
    masks = {
        "lin1.W": np.ones((m, k), dtype=bool),
        "lin2.W": np.ones(out_W.shape, dtype=bool),
    }
    return ModelParams(spec, tensors, tropical, masks, {})
