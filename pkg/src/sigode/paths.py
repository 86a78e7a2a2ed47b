"""Piecewise-linear paths and their (log-)signatures.

Paths carry observation times and feature values; time is always adjoined as
channel 0 before any signature computation, so a path with c feature channels
drives signatures in d = c + 1 dimensions.

Signatures over an interval are products of segment exponentials (the
signature of a line segment is the tensor exponential of its increment);
segments are split at interval endpoints, so any [a, b] inside the time domain
is valid.  Log-signatures are tensor logs compressed into the Lyndon basis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError
from .lyndon import BASIS_TAG, LyndonBasis, compress, enumerate_lyndon, logsig_dim
from .tensors import TensorShape, TruncatedTensor, tensor_exp, tensor_log, tensor_mul

__all__ = [
    "PiecewiseLinearPath",
    "LogSignature",
    "LogSignatureStream",
    "segment_signature",
    "path_signature",
    "log_signature",
    "logsig_stream",
    "index_partition",
    "brute_force_signature",
]


class PiecewiseLinearPath:
    """Observations (t_i, x_i), linearly interpolated between samples.

    times: strictly increasing, shape (n+1,).  values: shape (n+1, c) with
    c >= 1 feature channels.  The embedded path prepends time as channel 0.
    """

    def __init__(self, times: np.ndarray, values: np.ndarray):
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or times.size < 2:
            raise ShapeError("need at least two observation times")
        if values.shape[0] != times.size:
            raise ShapeError(
                f"{times.size} times but {values.shape[0]} value rows"
            )
        if not np.all(np.diff(times) > 0):
            raise DomainError("observation times must be strictly increasing")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
            raise DomainError("non-finite observation")
        self.times = times
        self.values = values

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def embedded_dim(self) -> int:
        return self.channels + 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def embedded(self) -> np.ndarray:
        """All samples of the time-augmented path, shape (n+1, c+1)."""
        return np.concatenate([self.times[:, None], self.values], axis=1)

    def eval_embedded(self, t: np.ndarray) -> np.ndarray:
        """Time-augmented path at times t (within the domain), linearly
        interpolated; exact at sample points."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        lo, hi = self.domain
        if np.any(t < lo) or np.any(t > hi):
            raise DomainError(f"evaluation time outside domain [{lo}, {hi}]")
        out = np.empty((t.size, self.embedded_dim))
        out[:, 0] = t
        for j in range(self.channels):
            out[:, j + 1] = np.interp(t, self.times, self.values[:, j])
        return out


@dataclass
class LogSignature:
    """Compressed log-signature of one interval: coords in the Lyndon basis
    (length logsig_dim(d, N)), ordered by length then lexicographically."""

    shape: TensorShape
    interval: tuple[float, float]
    coords: np.ndarray

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64).ravel()
        if self.coords.size != logsig_dim(self.shape.d, self.shape.N):
            raise ShapeError(
                f"{self.coords.size} coords for shape {self.shape}"
            )

    @property
    def width(self) -> float:
        return self.interval[1] - self.interval[0]

    def basis(self) -> LyndonBasis:
        return enumerate_lyndon(self.shape.d, self.shape.N)

    def tensor(self) -> TruncatedTensor:
        from .lyndon import expand

        return expand(self.coords, self.basis())


@dataclass
class LogSignatureStream:
    """Per-interval log-signatures over a partition of a path's time domain."""

    shape: TensorShape
    partition: np.ndarray
    logsigs: list[LogSignature]
    basis_tag: str = BASIS_TAG
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.logsigs)

    @property
    def coord_matrix(self) -> np.ndarray:
        """Stacked coordinates, shape (m, logsig_dim)."""
        return np.stack([ls.coords for ls in self.logsigs])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.partition)


def segment_signature(increment: np.ndarray, shape: TensorShape) -> TruncatedTensor:
    """Signature of a single linear segment: exp of the level-1 increment."""
    increment = np.asarray(increment, dtype=np.float64).ravel()
    if increment.size != shape.d:
        raise ShapeError(f"increment has {increment.size} entries, expected {shape.d}")
    v = TruncatedTensor.zero(shape)
    v.levels[1] = increment.copy()
    return tensor_exp(v)


def _interval_boundaries(path: PiecewiseLinearPath, a: float, b: float) -> np.ndarray:
    lo, hi = path.domain
    if not (lo <= a < b <= hi):
        raise DomainError(
            f"invalid interval [{a}, {b}] for path domain [{lo}, {hi}]"
        )
    inner = path.times[(path.times > a) & (path.times < b)]
    return np.concatenate([[a], inner, [b]])


def path_signature(
    path: PiecewiseLinearPath, interval: tuple[float, float], N: int
) -> TruncatedTensor:
    """Depth-N signature of the time-augmented path over [a, b], as the
    product of segment exponentials (multiplicativity over concatenation)."""
    a, b = float(interval[0]), float(interval[1])
    shape = TensorShape(path.embedded_dim, N)
    bounds = _interval_boundaries(path, a, b)
    points = path.eval_embedded(bounds)
    sig = segment_signature(points[1] - points[0], shape)
    for i in range(1, len(bounds) - 1):
        sig = tensor_mul(sig, segment_signature(points[i + 1] - points[i], shape))
    return sig


def log_signature(
    path: PiecewiseLinearPath,
    interval: tuple[float, float],
    N: int,
    basis: LyndonBasis | None = None,
) -> LogSignature:
    """Compressed log-signature over [a, b].

    Single-segment intervals short-circuit: the log of a segment exponential
    is the increment itself, so only level-1 coordinates are nonzero.
    """
    a, b = float(interval[0]), float(interval[1])
    shape = TensorShape(path.embedded_dim, N)
    if basis is None:
        basis = enumerate_lyndon(shape.d, shape.N)
    bounds = _interval_boundaries(path, a, b)
    coords = np.zeros(len(basis))
    if N == 1 or len(bounds) == 2:
        # increments only: level-1 Lyndon coords are the single letters, in
        # channel order at the front of the coordinate vector
        pts = path.eval_embedded(np.asarray([a, b]))
        coords[: shape.d] = pts[1] - pts[0]
        return LogSignature(shape, (a, b), coords)
    sig = path_signature(path, (a, b), N)
    coords = compress(tensor_log(sig), basis)
    return LogSignature(shape, (a, b), coords)


def index_partition(times: np.ndarray, step: int) -> np.ndarray:
    """Partition r_i = t_(i*step) over observation times; the last interval
    is shorter when step does not divide the sample count."""
    times = np.asarray(times, dtype=np.float64)
    if step < 1:
        raise DomainError(f"step must be >= 1, got {step}")
    idx = list(range(0, times.size - 1, step)) + [times.size - 1]
    return times[np.asarray(idx)]


def logsig_stream(
    path: PiecewiseLinearPath, partition: np.ndarray, N: int
) -> LogSignatureStream:
    """Per-interval log-signatures over a partition tiling the path domain."""
    partition = np.asarray(partition, dtype=np.float64)
    lo, hi = path.domain
    if partition.size < 2 or partition[0] != lo or partition[-1] != hi:
        raise DomainError("partition must start and end at the path domain endpoints")
    if not np.all(np.diff(partition) > 0):
        raise DomainError("partition must be strictly increasing")
    shape = TensorShape(path.embedded_dim, N)
    basis = enumerate_lyndon(shape.d, shape.N)
    logsigs = [
        log_signature(path, (partition[i], partition[i + 1]), N, basis)
        for i in range(partition.size - 1)
    ]
    return LogSignatureStream(shape, partition, logsigs)


def brute_force_signature(
    path: PiecewiseLinearPath,
    interval: tuple[float, float],
    N: int,
    substeps: int = 10_000,
) -> TruncatedTensor:
    """Direct quadrature of the iterated integrals, as an independent check.

    Each word's integral is accumulated on a uniform grid of `substeps`
    sub-intervals: the innermost factor uses the exact sub-interval increment
    of the path, outer factors use the midpoint value of the previously
    accumulated integral (trapezoid-level accuracy, O(substeps^-2)).
    Level 1 telescopes to the exact increment.
    """
    a, b = float(interval[0]), float(interval[1])
    lo, hi = path.domain
    if not (lo <= a < b <= hi):
        raise DomainError(f"invalid interval [{a}, {b}]")
    if substeps < 1:
        raise DomainError("substeps must be >= 1")
    d = path.embedded_dim
    grid = np.linspace(a, b, substeps + 1)
    pts = path.eval_embedded(grid)
    dx = np.diff(pts, axis=0)  # (M, d)
    levels: list[np.ndarray] = [np.asarray(1.0)]
    # cumulative integrals per word, G[k] has shape (M+1, d^k)
    g_prev = np.ones((substeps + 1, 1))
    for k in range(1, N + 1):
        mid = 0.5 * (g_prev[:-1] + g_prev[1:])  # (M, d^(k-1))
        contrib = mid[:, :, None] * dx[:, None, :]  # (M, d^(k-1), d)
        flat = contrib.reshape(substeps, -1)
        g = np.zeros((substeps + 1, flat.shape[1]))
        np.cumsum(flat, axis=0, out=g[1:])
        levels.append(g[-1].reshape((d,) * k))
        g_prev = g
    return TruncatedTensor(TensorShape(d, N), levels)
