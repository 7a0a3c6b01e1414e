"""Exact max-plus and min-plus arithmetic on masked dense matrices.

The max-plus semiring extends the reals with a bottom element: -inf under
max-plus, +inf under min-plus. Bottom entries are carried in an explicit
boolean activity mask rather than as IEEE infinities, so stored values stay
finite, sums never mix infinities, and deactivated (pruned) weights keep a
well-defined representation. Values at inactive positions are never read.

Tie-breaking is deterministic everywhere: when several candidates attain the
maximum (or minimum), the lowest flat index wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExtendedReal",
    "TropicalMatrix",
    "MaxPlusProduct",
    "MinPlusProduct",
    "max_plus_matmul",
    "min_plus_matmul",
    "max_plus_identity",
    "min_plus_identity",
    "dilation",
    "erosion",
    "morphological_perceptron",
    "as_float_matrix",
    "as_float_vector",
]


def as_float_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising ValueError otherwise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must contain only finite values")
    return arr


def as_float_vector(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, raising ValueError otherwise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} must contain only finite values")
    return arr


@dataclass(frozen=True)
class ExtendedReal:
    """A real number extended with the semiring's absorbing bottom element.

    Under max-plus, bottom reads as -inf; under min-plus the same flag reads
    as +inf. When ``is_bottom`` is set, ``value`` is meaningless and is never
    consulted by any operation.
    """

    value: float = 0.0
    is_bottom: bool = False

    @classmethod
    def bottom(cls) -> "ExtendedReal":
        return cls(0.0, True)

    def add(self, other: "ExtendedReal") -> "ExtendedReal":
        """Tropical multiplication (ordinary +): bottom absorbs."""
        if self.is_bottom or other.is_bottom:
            return ExtendedReal.bottom()
        return ExtendedReal(self.value + other.value)

    def join(self, other: "ExtendedReal") -> "ExtendedReal":
        """Tropical addition (max): bottom is the identity."""
        if self.is_bottom:
            return other
        if other.is_bottom:
            return self
        return ExtendedReal(max(self.value, other.value))


class TropicalMatrix:
    """Dense matrix over a tropical semiring with an activity mask.

    ``active[i, j] == False`` marks entry (i, j) as the semiring bottom; its
    stored value is ignored by every operation and receives no gradient.
    Instances are immutable: the backing arrays are copied and write-locked.
    """

    __slots__ = ("values", "active")

    def __init__(self, values, active=None):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError(f"values must be a non-empty 2-D array, got shape {values.shape}")
        if active is None:
            active = np.ones(values.shape, dtype=bool)
        else:
            active = np.array(active, dtype=bool)
            if active.shape != values.shape:
                raise ValueError(
                    f"active mask shape {active.shape} does not match values shape {values.shape}"
                )
        if not np.isfinite(values[active]).all():
            raise ValueError("active entries must be finite")
        values.setflags(write=False)
        active.setflags(write=False)
        self.values = values
        self.active = active

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def dense(cls, values) -> "TropicalMatrix":
        """All-active matrix from a finite dense array."""
        return cls(values)

    def __repr__(self) -> str:
        return f"TropicalMatrix(shape={self.shape}, active={int(self.active.sum())}/{self.active.size})"


def max_plus_identity(n: int) -> TropicalMatrix:
    """Identity of max-plus matrix multiplication: 0 diagonal, bottom elsewhere."""
    return TropicalMatrix(np.zeros((n, n)), np.eye(n, dtype=bool))


def min_plus_identity(n: int) -> TropicalMatrix:
    """Identity of min-plus matrix multiplication: 0 diagonal, top elsewhere."""
    return TropicalMatrix(np.zeros((n, n)), np.eye(n, dtype=bool))


@dataclass(frozen=True)
class MaxPlusProduct:
    """Result of a max-plus product.

    ``is_bottom`` flags outputs whose maximum ranged over no active entry
    (their ``values`` slot holds 0.0 and must not be read). ``argmax`` holds,
    per output entry, the inner index k that attained the maximum, or -1 for
    bottom entries; ties resolve to the lowest k.
    """

    values: np.ndarray
    is_bottom: np.ndarray
    argmax: np.ndarray


@dataclass(frozen=True)
class MinPlusProduct:
    """Min-plus dual of :class:`MaxPlusProduct`; ``is_top`` flags +inf outputs."""

    values: np.ndarray
    is_top: np.ndarray
    argmin: np.ndarray


def max_plus_matmul(A: TropicalMatrix, x) -> MaxPlusProduct:
    """Max-plus matrix product: out[i, j] = max over active k of A[i, k] + x[k, j].

    Rows of ``A`` with no active entry produce bottom-flagged outputs rather
    than an error, since pruning can legitimately empty a row.
    """
    x = as_float_matrix(x, "x")
    if A.cols != x.shape[0]:
        raise ValueError(f"inner dimensions disagree: A is {A.shape}, x is {x.shape}")
    sums = A.values[:, :, None] + x[None, :, :]
    cand = np.where(A.active[:, :, None], sums, -np.inf)
    arg = cand.argmax(axis=1)
    vals = np.take_along_axis(cand, arg[:, None, :], axis=1)[:, 0, :]
    empty_row = ~A.active.any(axis=1)
    is_bottom = np.broadcast_to(empty_row[:, None], vals.shape).copy()
    vals = np.where(is_bottom, 0.0, vals)
    arg = np.where(is_bottom, -1, arg)
    return MaxPlusProduct(vals, is_bottom, arg)


def min_plus_matmul(A: TropicalMatrix, x) -> MinPlusProduct:
    """Min-plus matrix product: out[i, j] = min over active k of A[i, k] + x[k, j].

    Inactive entries read as +inf. The dual of :func:`max_plus_matmul`.
    """
    x = as_float_matrix(x, "x")
    if A.cols != x.shape[0]:
        raise ValueError(f"inner dimensions disagree: A is {A.shape}, x is {x.shape}")
    sums = A.values[:, :, None] + x[None, :, :]
    cand = np.where(A.active[:, :, None], sums, np.inf)
    arg = cand.argmin(axis=1)
    vals = np.take_along_axis(cand, arg[:, None, :], axis=1)[:, 0, :]
    empty_row = ~A.active.any(axis=1)
    is_top = np.broadcast_to(empty_row[:, None], vals.shape).copy()
    vals = np.where(is_top, 0.0, vals)
    arg = np.where(is_top, -1, arg)
    return MinPlusProduct(vals, is_top, arg)


def dilation(w: TropicalMatrix, x) -> ExtendedReal:
    """Vector dilation: the max-plus inner product max_i (x[i] + w[i]).

    ``w`` is a 1xN tropical matrix (a structuring element). An all-inactive
    weight vector yields a bottom result; the caller decides what that means.
    """
    x = as_float_vector(x, "x")
    if w.rows != 1 or w.cols != x.shape[0]:
        raise ValueError(f"w must be 1x{x.shape[0]}, got {w.shape}")
    mask = w.active[0]
    if not mask.any():
        return ExtendedReal.bottom()
    return ExtendedReal(float(np.max(w.values[0][mask] + x[mask])))


def erosion(m: TropicalMatrix, x) -> ExtendedReal:
    """Vector erosion: the min-plus inner product min_i (x[i] + m[i]).

    The min-plus dual of :func:`dilation`; here ``is_bottom`` on the result
    marks the min-plus top (+inf).
    """
    x = as_float_vector(x, "x")
    if m.rows != 1 or m.cols != x.shape[0]:
        raise ValueError(f"m must be 1x{x.shape[0]}, got {m.shape}")
    mask = m.active[0]
    if not mask.any():
        return ExtendedReal.bottom()
    return ExtendedReal(float(np.min(m.values[0][mask] + x[mask])))


def morphological_perceptron(w0: float, w: TropicalMatrix, x) -> float:
    """Biased vector dilation: w0 joined with the dilation of x by w.

    The bias keeps the output defined even when every weight is inactive.
    """
    d = dilation(w, x)
    if d.is_bottom:
        return float(w0)
    return float(max(w0, d.value))
