"""Solving controlled differential equations through windowed path summaries.

A vector field f maps a state y in R^n to a linear map R^d -> R^n (stored as
an (n, d) matrix of channel columns).  Its iterated derivatives contract
against tensor levels: for the word (i_1, ..., i_k),

    f*1(y)[e_i]        = f_i(y),
    f*(k+1)(y)[e_i (x) w] = D(f*k(.)[w])(y) applied to direction f_i(y),

so the earliest integration letter acts first; for affine channels
f_i(y) = A_i y + b_i this closes to A_(ik) ... A_(i2) (A_(i1) y + b_(i1)).

One high-order step over an interval contracts these derivatives against the
truncated signature (Taylor) or integrates the flow of the log-signature
field over unit time (log-ODE).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ShapeError, SolverError
from .paths import LogSignature, PiecewiseLinearPath, log_signature
from .lyndon import enumerate_lyndon
from .tensors import TruncatedTensor

__all__ = [
    "OdeSolveConfig",
    "rk4_solve",
    "LinearVectorField",
    "SmoothVectorField",
    "vf_derivative",
    "taylor_step",
    "logode_field",
    "logode_step",
    "logode_solve",
    "linear_cde_reference",
]


@dataclass(frozen=True)
class OdeSolveConfig:
    """Fixed-step RK4 with `substeps` steps per interval."""

    substeps: int = 1

    def __post_init__(self) -> None:
        if self.substeps < 1:
            raise DomainError(f"substeps must be >= 1, got {self.substeps}")


def rk4_solve(
    field: Callable[[np.ndarray, float], np.ndarray],
    z0: np.ndarray,
    interval: tuple[float, float],
    substeps: int = 1,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta with fixed steps.

    field(z, t) returns dz/dt.  Raises SolverError naming the failing step if
    the state stops being finite.
    """
    a, b = float(interval[0]), float(interval[1])
    if substeps < 1:
        raise DomainError(f"substeps must be >= 1, got {substeps}")
    z = np.asarray(z0, dtype=np.float64).copy()
    h = (b - a) / substeps
    t = a
    for step in range(substeps):
        k1 = field(z, t)
        k2 = field(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = field(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = field(z + h * k3, t + h)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = a + (step + 1) * h
        if not np.all(np.isfinite(z)):
            raise SolverError(f"non-finite state at step {step + 1} of {substeps}")
    return z


class LinearVectorField:
    """Affine channels f_i(y) = A_i y + b_i.

    A has shape (d, n, n), b shape (d, n).  Derivatives of every order are
    available in closed form.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray | None = None):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ShapeError(f"A must have shape (d, n, n), got {A.shape}")
        d, n = A.shape[0], A.shape[1]
        if b is None:
            b = np.zeros((d, n))
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (d, n):
            raise ShapeError(f"b must have shape ({d}, {n}), got {b.shape}")
        self.A = A
        self.b = b
        self.channels = d
        self.state_dim = n

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """(n, d) matrix with columns f_i(y)."""
        return np.einsum("iab,b->ai", self.A, y) + self.b.T

    def derivative(self, k: int, y: np.ndarray) -> np.ndarray:
        """f*k(y) as an array of shape (n, d, ..., d) with k channel axes;
        entry [:, i1, ..., ik] is A_(ik) ... A_(i2) (A_(i1) y + b_(i1))."""
        if k < 0:
            raise DomainError(f"negative derivative order {k}")
        y = np.asarray(y, dtype=np.float64)
        if k == 0:
            return y.copy()
        d, n = self.channels, self.state_dim
        v = self(y)  # (n, d)
        for level in range(2, k + 1):
            flat = v.reshape(n, d ** (level - 1))
            v = np.einsum("jab,bW->aWj", self.A, flat).reshape((n,) + (d,) * level)
        return v


class SmoothVectorField:
    """A general field given as a callable y -> (n, d) matrix.

    Derivatives up to `depth` are approximated by nested central differences
    with step fd_step * (1 + |y|) along the normalized channel directions.
    """

    def __init__(
        self,
        f: Callable[[np.ndarray], np.ndarray],
        state_dim: int,
        channels: int,
        depth: int,
        fd_step: float = 1e-4,
    ):
        self.f = f
        self.state_dim = state_dim
        self.channels = channels
        self.depth = depth
        self.fd_step = fd_step

    def __call__(self, y: np.ndarray) -> np.ndarray:
        out = np.asarray(self.f(y), dtype=np.float64)
        if out.shape != (self.state_dim, self.channels):
            raise ShapeError(
                f"field returned shape {out.shape}, expected "
                f"{(self.state_dim, self.channels)}"
            )
        return out

    def derivative(self, k: int, y: np.ndarray) -> np.ndarray:
        if k > self.depth:
            raise DomainError(f"derivative order {k} above declared depth {self.depth}")
        if k < 0:
            raise DomainError(f"negative derivative order {k}")
        y = np.asarray(y, dtype=np.float64)
        if k == 0:
            return y.copy()
        if k == 1:
            return self(y)
        n, d = self.state_dim, self.channels
        directions = self(y)  # columns f_i(y)
        out = np.zeros((n,) + (d,) * k)
        h = self.fd_step * (1.0 + float(np.linalg.norm(y)))
        for i in range(d):
            u = directions[:, i]
            nu = float(np.linalg.norm(u))
            if nu == 0.0:
                continue
            step = h * u / nu
            plus = self.derivative(k - 1, y + step)
            minus = self.derivative(k - 1, y - step)
            out[:, i, ...] = (plus - minus) * (nu / (2.0 * h))
        return out


VectorField = LinearVectorField | SmoothVectorField


def vf_derivative(field: VectorField, k: int, y: np.ndarray) -> np.ndarray:
    """k-th iterated field derivative at y (see module docstring for the
    contraction convention)."""
    return field.derivative(k, y)


def taylor_step(
    field: VectorField, y_s: np.ndarray, sig: TruncatedTensor
) -> np.ndarray:
    """One high-order Taylor step: sum_k f*k(y_s) contracted with level k of
    the signature.  The signature must be group-like (scalar part 1)."""
    if abs(sig.scalar - 1.0) > 1e-9:
        raise DomainError(f"signature scalar part must be 1, got {sig.scalar!r}")
    y_s = np.asarray(y_s, dtype=np.float64)
    out = y_s.copy()
    for k in range(1, sig.shape.N + 1):
        deriv = field.derivative(k, y_s)
        out += np.tensordot(deriv, sig.levels[k], axes=k)
    return out


def logode_field(
    field: VectorField, logsig: LogSignature
) -> Callable[[np.ndarray], np.ndarray]:
    """The autonomous field F(z) = sum_k f*k(z) contracted with level k of the
    expanded log-signature; integrating its flow over unit time performs one
    log-ODE step."""
    tensor = logsig.tensor()
    nontrivial = [
        k for k in range(1, tensor.shape.N + 1) if np.any(tensor.levels[k] != 0.0)
    ]

    def F(z: np.ndarray) -> np.ndarray:
        out = np.zeros_like(np.asarray(z, dtype=np.float64))
        for k in nontrivial:
            out += np.tensordot(field.derivative(k, z), tensor.levels[k], axes=k)
        return out

    return F


def logode_step(
    field: VectorField,
    y_s: np.ndarray,
    logsig: LogSignature,
    config: OdeSolveConfig = OdeSolveConfig(),
) -> np.ndarray:
    """Advance the state across one interval by integrating the
    log-signature field over [0, 1] with RK4."""
    F = logode_field(field, logsig)
    return rk4_solve(lambda z, t: F(z), y_s, (0.0, 1.0), config.substeps)


def logode_solve(
    field: VectorField,
    y0: np.ndarray,
    path: PiecewiseLinearPath,
    partition: np.ndarray,
    N: int,
    config: OdeSolveConfig = OdeSolveConfig(),
) -> np.ndarray:
    """Chain log-ODE steps over a partition of the path domain; returns the
    trajectory at partition points, shape (m+1, n)."""
    partition = np.asarray(partition, dtype=np.float64)
    if partition.size < 2 or not np.all(np.diff(partition) > 0):
        raise DomainError("partition must be strictly increasing with >= 2 points")
    basis = enumerate_lyndon(path.embedded_dim, N)
    y = np.asarray(y0, dtype=np.float64).copy()
    traj = [y.copy()]
    for i in range(partition.size - 1):
        ls = log_signature(path, (partition[i], partition[i + 1]), N, basis)
        y = logode_step(field, y, ls, config)
        traj.append(y.copy())
    return np.stack(traj)


def linear_cde_reference(
    field: VectorField,
    y0: np.ndarray,
    path: PiecewiseLinearPath,
    fine_segments: int = 2**14,
) -> np.ndarray:
    """High-accuracy terminal state: depth-1 steps on a fine partition.

    The fine partition is the union of the path's own sample times with a
    uniform grid of `fine_segments` intervals, so every step sees a single
    linear piece of the driver; within a step the depth-1 field is constant
    in the driver, f(z) . increment, integrated by one RK4 step.
    """
    lo, hi = path.domain
    grid = np.union1d(path.times, np.linspace(lo, hi, fine_segments + 1))
    pts = path.eval_embedded(grid)
    y = np.asarray(y0, dtype=np.float64).copy()
    for i in range(grid.size - 1):
        inc = pts[i + 1] - pts[i]
        y = rk4_solve(lambda z, t, inc=inc: field(z) @ inc, y, (0.0, 1.0), 1)
    return y
