"""Truncated tensor algebra over R^d.

Elements of T^N(R^d) are stored densely, one numpy array per tensor level:
level k has shape (d,)*k (level 0 is a scalar).  Flattened serialization is
level-major with C-order within each level, so the entry for the word
(i_1, ..., i_k) sits at offset sum_j (i_j - 1) d^(k-j) inside its level block,
i.e. words are ordered lexicographically.

All coefficients are float64.  Norms used for tolerance checks are Euclidean
norms of the flattened coefficient vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "TensorShape",
    "TruncatedTensor",
    "tensor_add",
    "tensor_mul",
    "tensor_exp",
    "tensor_log",
    "project_level",
]


@dataclass(frozen=True)
class TensorShape:
    """Ambient dimension d >= 1 and truncation depth N >= 1."""

    d: int
    N: int

    def __post_init__(self) -> None:
        if self.d < 1 or self.N < 1:
            raise ShapeError(f"need d >= 1 and N >= 1, got d={self.d}, N={self.N}")

    def level_size(self, k: int) -> int:
        return self.d**k

    @property
    def coeff_count(self) -> int:
        return sum(self.d**k for k in range(self.N + 1))


class TruncatedTensor:
    """A dense element of T^N(R^d)."""

    __slots__ = ("shape", "levels")

    def __init__(self, shape: TensorShape, levels: list[np.ndarray]):
        if len(levels) != shape.N + 1:
            raise ShapeError(f"expected {shape.N + 1} levels, got {len(levels)}")
        self.shape = shape
        self.levels = []
        for k, lev in enumerate(levels):
            arr = np.asarray(lev, dtype=np.float64)
            if arr.shape != (shape.d,) * k:
                raise ShapeError(
                    f"level {k} has shape {arr.shape}, expected {(shape.d,) * k}"
                )
            self.levels.append(arr)

    @classmethod
    def zero(cls, shape: TensorShape) -> "TruncatedTensor":
        return cls(shape, [np.zeros((shape.d,) * k) for k in range(shape.N + 1)])

    @classmethod
    def unit(cls, shape: TensorShape) -> "TruncatedTensor":
        t = cls.zero(shape)
        t.levels[0] = np.asarray(1.0)
        return t

    @property
    def scalar(self) -> float:
        return float(self.levels[0])

    def copy(self) -> "TruncatedTensor":
        return TruncatedTensor(self.shape, [lev.copy() for lev in self.levels])

    def flatten(self) -> np.ndarray:
        """Level-major, lexicographic-within-level coefficient vector."""
        return np.concatenate([lev.ravel() for lev in self.levels])

    @classmethod
    def from_flat(cls, shape: TensorShape, flat: np.ndarray) -> "TruncatedTensor":
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != shape.coeff_count:
            raise ShapeError(
                f"flat vector has {flat.size} entries, expected {shape.coeff_count}"
            )
        levels, off = [], 0
        for k in range(shape.N + 1):
            n = shape.level_size(k)
            levels.append(flat[off : off + n].reshape((shape.d,) * k))
            off += n
        return cls(shape, levels)

    def truncated(self, N: int) -> "TruncatedTensor":
        """Drop levels above N (N <= current depth)."""
        if not 1 <= N <= self.shape.N:
            raise ShapeError(f"cannot truncate depth {self.shape.N} to {N}")
        return TruncatedTensor(TensorShape(self.shape.d, N), self.levels[: N + 1])

    def norm(self) -> float:
        return float(np.linalg.norm(self.flatten()))

    # arithmetic sugar; the canonical entry points are the module functions
    def __add__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return tensor_add(self, other)

    def __sub__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        _check_same_shape(self, other)
        return TruncatedTensor(
            self.shape, [a - b for a, b in zip(self.levels, other.levels)]
        )

    def __mul__(self, c: float) -> "TruncatedTensor":
        return TruncatedTensor(self.shape, [lev * float(c) for lev in self.levels])

    __rmul__ = __mul__

    def __matmul__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return tensor_mul(self, other)

    def __repr__(self) -> str:
        return (
            f"TruncatedTensor(d={self.shape.d}, N={self.shape.N}, "
            f"scalar={self.scalar:g}, norm={self.norm():g})"
        )


def _check_same_shape(a: TruncatedTensor, b: TruncatedTensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def tensor_add(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Levelwise sum."""
    _check_same_shape(a, b)
    return TruncatedTensor(a.shape, [x + y for x, y in zip(a.levels, b.levels)])


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Truncated tensor product: level n of the result is
    sum_{k=0..n} a_k (outer) b_{n-k}; terms beyond level N are dropped."""
    _check_same_shape(a, b)
    shape = a.shape
    levels = []
    for n in range(shape.N + 1):
        acc = np.zeros((shape.d,) * n)
        for k in range(n + 1):
            acc += np.multiply.outer(a.levels[k], b.levels[n - k])
        levels.append(acc)
    return TruncatedTensor(shape, levels)


def tensor_exp(a: TruncatedTensor) -> TruncatedTensor:
    """Tensor exponential of an element with zero scalar part.

    The series sum_k a^(tensor k) / k! terminates at k = N because each
    product gains a level.
    """
    if a.scalar != 0.0:
        raise DomainError(f"tensor_exp requires zero scalar part, got {a.scalar!r}")
    result = TruncatedTensor.unit(a.shape)
    term = TruncatedTensor.unit(a.shape)
    for k in range(1, a.shape.N + 1):
        term = tensor_mul(term, a) * (1.0 / k)
        result = tensor_add(result, term)
    return result


def tensor_log(a: TruncatedTensor) -> TruncatedTensor:
    """Tensor logarithm of an element with positive scalar part.

    With y = a/a0 - 1 (zero scalar part),
    log(a) = log(a0) * 1 + sum_{n=1..N} ((-1)^(n+1) / n) y^(tensor n);
    the series terminates at N for the same truncation reason as the
    exponential.  Inverse of tensor_exp on zero-scalar-part elements.
    """
    a0 = a.scalar
    if a0 <= 0.0:
        raise DomainError(f"tensor_log requires positive scalar part, got {a0!r}")
    y = a * (1.0 / a0)
    y.levels[0] = np.asarray(0.0)
    result = TruncatedTensor.zero(a.shape)
    term = TruncatedTensor.unit(a.shape)
    for n in range(1, a.shape.N + 1):
        term = tensor_mul(term, y)
        result = tensor_add(result, term * ((-1.0) ** (n + 1) / n))
    result.levels[0] = np.asarray(math.log(a0))
    return result


def project_level(a: TruncatedTensor, k: int) -> np.ndarray:
    """The level-k coefficient block, as a copy."""
    if not 0 <= k <= a.shape.N:
        raise ShapeError(f"level {k} out of range for depth {a.shape.N}")
    return a.levels[k].copy()
