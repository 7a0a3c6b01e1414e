"""Minimal reverse-mode automatic differentiation for the head topologies.

Dense float64 tensors, a linear map, batch normalization, two losses, and
the max-plus primitive with argmax-routed subgradients. Activations are laid
out features x batch so that compositions read like the column-vector
algebra they implement; loaders transpose sample-major data on ingestion.

Gradient convention for max-type operations: the incoming gradient is routed
entirely to the recorded argmax candidate. For a max-plus unit this means
both the winning weight and the winning input receive the full gradient
(d(w + x)/dw = d(w + x)/dx = 1); when the bias wins, only the bias receives
it. At exact ties the lowest-index candidate takes everything, matching the
tropical core's tie-breaking. Inactive entries receive exactly zero, always.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "TropicalParam",
    "Tape",
    "UndefinedOutputError",
    "BOTTOM_CLAMP",
    "linear",
    "maxplus",
    "relu",
    "group_max",
    "batchnorm",
    "sigmoid_bce",
    "softmax_ce",
]

# Stand-in for semantically -inf outputs when a degenerate (over-pruned)
# model is evaluated anyway: large enough to lose every maximum and rank
# last, small enough not to overflow downstream float64 arithmetic.
BOTTOM_CLAMP = -1e9


class UndefinedOutputError(RuntimeError):
    """A max-plus row had no active weight and no active bias."""


class Tensor:
    """Dense float64 tensor. Parameters set ``requires_grad``; intermediate
    results receive gradients transparently during the backward pass."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ValueError("Tensor entries must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _out(data: np.ndarray) -> Tensor:
    # Internal constructor for op outputs; skips the finite scan on the hot path.
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    return t


class TropicalParam:
    """Trainable max-plus weight matrix: finite values plus a frozen activity mask.

    The mask is fixed at construction; training updates only active values.
    Values at inactive positions are never read and never receive gradient.
    """

    __slots__ = ("values", "active", "grad")

    def __init__(self, values, active=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if active is None:
            active = np.ones(values.shape, dtype=bool)
        else:
            active = np.array(active, dtype=bool)
            if active.shape != values.shape:
                raise ValueError("active mask shape does not match values")
        if not np.isfinite(values[active]).all():
            raise ValueError("active entries must be finite")
        active.setflags(write=False)
        self.values = values
        self.active = active
        self.grad = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def active_count(self) -> int:
        return int(self.active.sum())

    def copy(self) -> "TropicalParam":
        return TropicalParam(self.values.copy(), self.active.copy())

    def __repr__(self) -> str:
        return f"TropicalParam(shape={self.shape}, active={self.active_count()})"


def _ensure_grad(p) -> np.ndarray:
    if p.grad is None:
        base = p.values if isinstance(p, TropicalParam) else p.data
        p.grad = np.zeros_like(base)
    return p.grad


class Tape:
    """Ordered record of operations for one forward pass.

    Ops are appended in execution order, which is a topological order by
    construction; ``backward`` replays them exactly once in reverse. A tape
    is single-threaded and single-use.
    """

    def __init__(self):
        self._ops: list = []

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        loss.grad = np.ones(())
        for op in reversed(self._ops):
            op()


def linear(tape: Tape, A: Tensor, x: Tensor, bias: Tensor | None = None,
           weight_mask: np.ndarray | None = None) -> Tensor:
    """Matrix product A @ x with optional broadcast bias and pruning mask.

    ``weight_mask`` zeroes pruned weights in the forward product and blocks
    their gradient, so pruned entries neither contribute nor move.
    """
    if A.data.ndim != 2 or x.data.ndim != 2 or A.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"shape mismatch: A is {A.data.shape}, x is {x.data.shape}")
    W = A.data if weight_mask is None else A.data * weight_mask
    out_data = W @ x.data
    if bias is not None:
        if bias.data.shape != (A.data.shape[0],):
            raise ValueError(f"bias shape {bias.data.shape} does not match output rows")
        out_data = out_data + bias.data[:, None]
    out = _out(out_data)

    def _backward():
        g = out.grad
        if g is None:
            return
        gA = g @ x.data.T
        if weight_mask is not None:
            gA *= weight_mask
        _ensure_grad(A)
        A.grad += gA
        _ensure_grad(x)
        x.grad += W.T @ g
        if bias is not None:
            _ensure_grad(bias)
            bias.grad += g.sum(axis=1)

    tape.record(_backward)
    return out


def maxplus(tape: Tape, W: TropicalParam, bias: TropicalParam | None, y: Tensor,
            allow_bottom: bool = False) -> Tensor:
    """Max-plus layer: out[i, j] = max over active k of (W[i, k] + y[k, j]), joined
    with the bias where present.

    Candidate order for tie-breaking is weight entries first (by column),
    bias last, so the bias wins only strictly. Rows with no active candidate
    raise unless ``allow_bottom``, in which case they are clamped to
    ``BOTTOM_CLAMP`` (degenerate-model evaluation).
    """
    m, k = W.shape
    if y.data.ndim != 2 or y.data.shape[0] != k:
        raise ValueError(f"shape mismatch: W is {W.shape}, y is {y.data.shape}")
    if bias is not None and bias.shape != (m, 1):
        raise ValueError(f"bias must be {m}x1, got {bias.shape}")
    b = y.data.shape[1]

    degree = W.active.sum(axis=1)
    max_deg = int(degree.max()) if m else 0
    if max_deg * 4 <= k:
        # Sparse rows: gather the few active candidates into a padded [m, D, b]
        # block instead of scanning all k columns.
        act_r, act_c = np.nonzero(W.active)
        pad_idx = np.zeros((m, max(max_deg, 1)), dtype=np.int64)
        pad_valid = np.zeros((m, max(max_deg, 1)), dtype=bool)
        slot = np.concatenate([np.arange(d) for d in degree]) if act_r.size else \
            np.empty(0, dtype=np.int64)
        pad_idx[act_r, slot] = act_c
        pad_valid[act_r, slot] = True
        vals = np.where(pad_valid, W.values[np.arange(m)[:, None], pad_idx], -np.inf)
        cand = vals[:, :, None] + y.data[pad_idx, :]
        apos = cand.argmax(axis=1)
        wmax = np.take_along_axis(cand, apos[:, None, :], axis=1)[:, 0, :]
        warg = pad_idx[np.arange(m)[:, None], apos]
    else:
        # Candidate tensor is m*k*chunk floats; chunk the batch to bound peak memory.
        chunk = max(1, (1 << 23) // max(1, m * k))
        warg = np.empty((m, b), dtype=np.int64)
        wmax = np.empty((m, b), dtype=np.float64)
        masked = np.where(W.active, W.values, -np.inf)
        for s in range(0, b, chunk):
            sl = slice(s, min(s + chunk, b))
            cand = masked[:, :, None] + y.data[None, :, sl]
            a = cand.argmax(axis=1)
            warg[:, sl] = a
            wmax[:, sl] = np.take_along_axis(cand, a[:, None, :], axis=1)[:, 0, :]
    if bias is not None:
        bvals = np.where(bias.active[:, 0], bias.values[:, 0], -np.inf)
        from_bias = bvals[:, None] > wmax
        out_data = np.where(from_bias, bvals[:, None], wmax)
    else:
        from_bias = np.zeros((m, b), dtype=bool)
        out_data = wmax
    bottom = np.isneginf(out_data)
    if bottom.any():
        if not allow_bottom:
            rows = sorted(set(np.nonzero(bottom)[0].tolist()))
            raise UndefinedOutputError(
                f"max-plus rows {rows} have no active weight and no active bias"
            )
        out_data = np.where(bottom, BOTTOM_CLAMP, out_data)
    out = _out(out_data)

    def _backward():
        g = out.grad
        if g is None:
            return
        gw = np.where(from_bias | bottom, 0.0, g)
        flat_w = (np.arange(m)[:, None] * k + warg).ravel()
        _ensure_grad(W)
        W.grad += np.bincount(flat_w, weights=gw.ravel(), minlength=m * k).reshape(m, k)
        flat_y = (warg * b + np.arange(b)[None, :]).ravel()
        _ensure_grad(y)
        y.grad += np.bincount(flat_y, weights=gw.ravel(), minlength=k * b).reshape(k, b)
        if bias is not None:
            _ensure_grad(bias)
            bias.grad[:, 0] += np.where(from_bias, g, 0.0).sum(axis=1)

    tape.record(_backward)
    return out


def relu(tape: Tape, x: Tensor) -> Tensor:
    out = _out(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def _backward():
        g = out.grad
        if g is None:
            return
        _ensure_grad(x)
        x.grad += g * mask

    tape.record(_backward)
    return out


def group_max(tape: Tape, x: Tensor, pooling: int) -> Tensor:
    """Maxout pooling: out[i, j] = max over p of x[i + p*N, j], N = rows / pooling.

    Rows are grouped piece-major: rows [0, N) are piece 0, [N, 2N) piece 1,
    and so on. Ties go to the lowest piece, i.e. the lowest original row.
    """
    rows, b = x.data.shape
    if pooling < 1 or rows % pooling != 0:
        raise ValueError(f"row count {rows} is not a multiple of pooling {pooling}")
    n = rows // pooling
    stacked = x.data.reshape(pooling, n, b)
    arg = stacked.argmax(axis=0)
    out = _out(np.take_along_axis(stacked, arg[None], axis=0)[0])

    i_idx = np.broadcast_to(np.arange(n)[:, None], (n, b))
    j_idx = np.broadcast_to(np.arange(b)[None, :], (n, b))

    def _backward():
        g = out.grad
        if g is None:
            return
        _ensure_grad(x)
        gview = x.grad.reshape(pooling, n, b)
        np.add.at(gview, (arg, i_idx, j_idx), g)

    tape.record(_backward)
    return out


def batchnorm(tape: Tape, x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: np.ndarray, running_var: np.ndarray, *,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-feature batch normalization over the batch axis.

    Train mode normalizes by batch statistics (biased variance) and updates
    the running averages in place (unbiased variance, matching the usual
    convention). Eval mode applies the stored running statistics.
    """
    m, b = x.data.shape
    if gamma.data.shape != (m,) or beta.data.shape != (m,):
        raise ValueError("gamma/beta must have one entry per feature")
    if training:
        if b < 2:
            raise ValueError(f"batch normalization needs batch size >= 2 in train mode, got {b}")
        mu = x.data.mean(axis=1)
        var = x.data.var(axis=1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[:, None]) * inv[:, None]
        running_mean[:] = (1.0 - momentum) * running_mean + momentum * mu
        running_var[:] = (1.0 - momentum) * running_var + momentum * var * b / (b - 1)
    else:
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[:, None]) * inv[:, None]
    out = _out(gamma.data[:, None] * xhat + beta.data[:, None])

    def _backward():
        g = out.grad
        if g is None:
            return
        _ensure_grad(gamma)
        gamma.grad += (g * xhat).sum(axis=1)
        _ensure_grad(beta)
        beta.grad += g.sum(axis=1)
        _ensure_grad(x)
        gxhat = g * gamma.data[:, None]
        if training:
            x.grad += inv[:, None] * (
                gxhat
                - gxhat.mean(axis=1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=1, keepdims=True)
            )
        else:
            x.grad += gxhat * inv[:, None]

    tape.record(_backward)
    return out


def sigmoid_bce(tape: Tape, logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with logits over every (label, sample) cell.

    Uses the stabilized form max(z, 0) - z*t + log(1 + exp(-|z|)).
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.data.shape:
        raise ValueError(f"targets shape {t.shape} does not match logits {logits.data.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise ValueError("targets must be 0/1")
    z = logits.data
    elems = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = _out(np.asarray(elems.mean()))
    n = z.size

    def _backward():
        g = out.grad
        if g is None:
            return
        _ensure_grad(logits)
        ez = np.exp(-np.abs(z))
        sig = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
        logits.grad += g * (sig - t) / n

    tape.record(_backward)
    return out


def softmax_ce(tape: Tape, logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are class indices per column."""
    lab = np.asarray(labels)
    c, b = logits.data.shape
    if lab.shape != (b,) or not np.issubdtype(lab.dtype, np.integer):
        raise ValueError("labels must be an integer vector with one entry per column")
    if lab.min() < 0 or lab.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits.data
    zmax = z.max(axis=0)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=0))
    cols = np.arange(b)
    out = _out(np.asarray((lse - z[lab, cols]).mean()))

    def _backward():
        g = out.grad
        if g is None:
            return
        _ensure_grad(logits)
        soft = np.exp(z - lse[None, :])
        soft[lab, cols] -= 1.0
        logits.grad += g * soft / b

    tape.record(_backward)
    return out
