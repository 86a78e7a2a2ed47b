"""Lyndon word basis for the free Lie algebra inside T^N(R^d).

Words use letters 1..d.  A word is Lyndon when it is strictly smaller than
every proper rotation of itself.  The basis is ordered by length, then
lexicographically; this order is the serialization contract for compressed
log-signature coordinates (basis order tag "lyndon-lenlex/v1").

Bracketings follow the standard factorization: w = uv with v the longest
proper Lyndon suffix, bracket(w) = [bracket(u), bracket(v)].  Expanded in the
word basis, bracket(w) equals w plus lexicographically later words only, which
is what makes compression a triangular solve.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import NotLieElementError, ShapeError
from .tensors import TensorShape, TruncatedTensor, tensor_mul

__all__ = [
    "logsig_dim",
    "is_lyndon",
    "LyndonBasis",
    "enumerate_lyndon",
    "compress",
    "expand",
    "BASIS_TAG",
]

BASIS_TAG = "lyndon-lenlex/v1"


def _mobius(n: int) -> int:
    if n == 1:
        return 1
    m, sign = n, 1
    p = 2
    while p * p <= m:
        if m % p == 0:
            m //= p
            if m % p == 0:
                return 0
            sign = -sign
        else:
            p += 1
    if m > 1:
        sign = -sign
    return sign


def logsig_dim(d: int, N: int) -> int:
    """Dimension of the depth-N free Lie algebra over R^d (necklace count):
    sum_{k=1..N} (1/k) sum_{i | k} mobius(k/i) d^i.  Exact integer arithmetic."""
    if d < 1 or N < 1:
        raise ShapeError(f"need d >= 1 and N >= 1, got d={d}, N={N}")
    total = 0
    for k in range(1, N + 1):
        s = sum(_mobius(k // i) * d**i for i in range(1, k + 1) if k % i == 0)
        assert s % k == 0
        total += s // k
    return total


def is_lyndon(word: tuple[int, ...]) -> bool:
    """True when the word is strictly smaller than all its proper rotations."""
    n = len(word)
    if n == 0:
        return False
    return all(word < word[r:] + word[:r] for r in range(1, n))


def _duval(d: int, N: int):
    """Yield all Lyndon words over 1..d of length <= N in lexicographic order."""
    w = [1]
    while w:
        yield tuple(w)
        w = (w * (N // len(w) + 1))[:N]
        while w and w[-1] == d:
            w.pop()
        if w:
            w[-1] += 1


class LyndonBasis:
    """Ordered Lyndon words with their bracketing tensors, for one (d, N)."""

    def __init__(self, shape: TensorShape, words: list[tuple[int, ...]]):
        self.shape = shape
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}
        self.brackets = [_bracket_tensor(w, shape) for w in words]
        # offsets of each level's words inside the coordinate vector
        self.level_slices: list[slice] = []
        start = 0
        for k in range(1, shape.N + 1):
            n = sum(1 for w in words if len(w) == k)
            self.level_slices.append(slice(start, start + n))
            start += n

    def __len__(self) -> int:
        return len(self.words)


def _standard_factorization(
    word: tuple[int, ...]
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    # longest proper Lyndon suffix; the matching prefix is then Lyndon too
    for j in range(1, len(word)):
        if is_lyndon(word[j:]):
            return word[:j], word[j:]
    raise AssertionError(f"no Lyndon suffix in {word}")


def _bracket_tensor(word: tuple[int, ...], shape: TensorShape) -> TruncatedTensor:
    if len(word) == 1:
        t = TruncatedTensor.zero(shape)
        t.levels[1][word[0] - 1] = 1.0
        return t
    u, v = _standard_factorization(word)
    bu, bv = _bracket_tensor(u, shape), _bracket_tensor(v, shape)
    return tensor_mul(bu, bv) - tensor_mul(bv, bu)


@lru_cache(maxsize=None)
def enumerate_lyndon(d: int, N: int) -> LyndonBasis:
    """Build (and cache) the Lyndon basis for T^N(R^d), ordered by length
    then lexicographically.  The basis is immutable once built."""
    shape = TensorShape(d, N)
    words = sorted(_duval(d, N), key=lambda w: (len(w), w))
    basis = LyndonBasis(shape, words)
    assert len(basis) == logsig_dim(d, N)
    return basis


def compress(
    tensor: TruncatedTensor, basis: LyndonBasis, rtol: float = 1e-9
) -> np.ndarray:
    """Coordinates of a Lie element in the Lyndon bracket basis.

    Works level by level: within a level, processing Lyndon words in
    lexicographic order makes the bracket expansions unit upper-triangular, so
    each coordinate is read off the residual directly.  If the residual left
    after elimination exceeds tolerance the level is re-solved by least
    squares; a persistent residual means the input was not a Lie element.
    """
    if tensor.shape != basis.shape:
        raise ShapeError(f"tensor shape {tensor.shape} != basis shape {basis.shape}")
    if abs(tensor.scalar) > rtol:
        raise NotLieElementError(f"nonzero scalar part {tensor.scalar!r}")
    coords = np.zeros(len(basis))
    residual = tensor.copy()
    for k in range(1, basis.shape.N + 1):
        sl = basis.level_slices[k - 1]
        scale = 1.0 + float(np.linalg.norm(tensor.levels[k]))
        for i in range(sl.start, sl.stop):
            word = basis.words[i]
            idx = tuple(let - 1 for let in word)
            c = residual.levels[k][idx]
            coords[i] = c
            if c != 0.0:
                residual.levels[k] -= c * basis.brackets[i].levels[k]
        res_norm = float(np.linalg.norm(residual.levels[k]))
        if res_norm > rtol * scale:
            # triangularity fallback: dense least squares on this level
            cols = np.stack(
                [basis.brackets[i].levels[k].ravel() for i in range(sl.start, sl.stop)],
                axis=1,
            )
            sol, *_ = np.linalg.lstsq(cols, tensor.levels[k].ravel(), rcond=None)
            coords[sl] = sol
            res = tensor.levels[k].ravel() - cols @ sol
            if float(np.linalg.norm(res)) > rtol * scale:
                raise NotLieElementError(
                    f"level {k} residual {float(np.linalg.norm(res)):.3g} "
                    f"exceeds tolerance; input is not a Lie element"
                )
    return coords


def expand(coords: np.ndarray, basis: LyndonBasis) -> TruncatedTensor:
    """Tensor-space element sum_w coords[w] * bracket(w)."""
    coords = np.asarray(coords, dtype=np.float64).ravel()
    if coords.size != len(basis):
        raise ShapeError(f"{coords.size} coordinates for a basis of {len(basis)}")
    out = TruncatedTensor.zero(basis.shape)
    for c, bracket in zip(coords, basis.brackets):
        if c != 0.0:
            for k in range(1, basis.shape.N + 1):
                out.levels[k] += c * bracket.levels[k]
    return out
