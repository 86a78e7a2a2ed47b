"""Reverse-mode differentiation on a recorded tape.

A Tape records every primitive operation's output value together with
closures computing vector-Jacobian products into its parents.  The backward
sweep visits nodes once in reverse order, so gradients cost a small constant
times the forward work.

Memory accounting: a LiveValueMeter counts intermediates currently held
alive (tape nodes plus any solver-state checkpoints registered with it) and
tracks the peak.  This is the memory proxy reported by training histories
and benchmark results: backprop through the solver keeps the whole solve on
one tape, interval-restarted adjoints keep only per-interval scratch tapes
plus one checkpoint per partition point.

All values are float64 numpy arrays; batch axes lead (a batch of vectors is
a (B, n) array).  Operands that never need gradients (path coordinates,
targets) are passed as plain arrays and close over the vjp callbacks.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LiveValueMeter",
    "Tape",
    "Var",
    "matmul",
    "bias",
    "relu",
    "tanh",
    "combine",
    "contract_field",
    "cross_entropy",
    "squared_error",
]


class LiveValueMeter:
    """Counts currently-live recorded values; remembers the peak."""

    def __init__(self) -> None:
        self.current = 0
        self.peak = 0

    def add(self, n: int = 1) -> None:
        self.current += n
        if self.current > self.peak:
            self.peak = self.current

    def release(self, n: int = 1) -> None:
        self.current -= n

    def reset_peak(self) -> None:
        self.peak = self.current


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value


class Tape:
    """Recorded forward pass; supports one reverse sweep per root."""

    def __init__(self, meter: LiveValueMeter | None = None):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[tuple] = []
        self.meter = meter

    def __len__(self) -> int:
        return len(self.values)

    def leaf(self, value: np.ndarray) -> Var:
        return self._push(np.asarray(value, dtype=np.float64), (), ())

    def _push(self, value: np.ndarray, parents: tuple[int, ...], vjps: tuple) -> Var:
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjps)
        if self.meter is not None:
            self.meter.add(1)
        return Var(self, len(self.values) - 1, value)

    def backward(self, root: Var, seed: np.ndarray | None = None) -> list:
        """Gradients of the root with respect to every node (None where the
        root does not depend on a node)."""
        if root.tape is not self:
            raise ValueError("root recorded on a different tape")
        grads: list[np.ndarray | None] = [None] * len(self.values)
        grads[root.idx] = (
            np.ones_like(self.values[root.idx]) if seed is None
            else np.asarray(seed, dtype=np.float64)
        )
        for i in range(root.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            for parent, vjp in zip(self.parents[i], self.vjps[i]):
                contrib = vjp(g)
                if grads[parent] is None:
                    grads[parent] = contrib
                else:
                    grads[parent] = grads[parent] + contrib
        return grads

    def release(self) -> None:
        """Drop all recorded values (meter bookkeeping included)."""
        if self.meter is not None:
            self.meter.release(len(self.values))
        self.values.clear()
        self.parents.clear()
        self.vjps.clear()

    def __enter__(self) -> "Tape":
        return self

    def __exit__(self, *exc) -> None:
        self.release()


def _as_value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def matmul(x, W: Var) -> Var:
    """x @ W.T for a batch x of shape (B, n) and weights W of shape (m, n).
    x may be a Var or a constant array."""
    xv = _as_value(x)
    out = xv @ W.value.T
    if isinstance(x, Var):
        return W.tape._push(
            out,
            (x.idx, W.idx),
            (lambda g: g @ W.value, lambda g, xv=xv: g.T @ xv),
        )
    return W.tape._push(out, (W.idx,), (lambda g, xv=xv: g.T @ xv,))


def bias(x: Var, b: Var) -> Var:
    out = x.value + b.value
    return x.tape._push(
        out, (x.idx, b.idx), (lambda g: g, lambda g: g.sum(axis=0))
    )


def relu(x: Var) -> Var:
    mask = x.value > 0.0
    return x.tape._push(
        x.value * mask, (x.idx,), (lambda g, mask=mask: g * mask,)
    )


def tanh(x: Var) -> Var:
    out = np.tanh(x.value)
    return x.tape._push(
        out, (x.idx,), (lambda g, out=out: g * (1.0 - out * out),)
    )


def combine(vars: list[Var], weights: list[float]) -> Var:
    """Linear combination sum_i w_i v_i as a single node (RK4 updates)."""
    out = weights[0] * vars[0].value
    for v, w in zip(vars[1:], weights[1:]):
        out = out + w * v.value
    return vars[0].tape._push(
        out,
        tuple(v.idx for v in vars),
        tuple((lambda g, w=w: w * g) for w in weights),
    )


def apply_coords(mat: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Contract a (B, w, p) stack of matrices with coordinates shaped (p,)
    (one interval shared by the batch) or (B, p) (per-sample intervals)."""
    if coords.ndim == 1:
        return mat @ coords
    return np.einsum("bwp,bp->bw", mat, coords)


def contract_field(flat: Var, coords: np.ndarray, w: int, p: int, scale: float) -> Var:
    """Reshape a (B, w*p) output to (B, w, p), contract the trailing axis
    with fixed coordinates, and scale: the vector field evaluation of a
    matrix-valued network against one interval's coordinates."""
    B = flat.value.shape[0]
    mat = flat.value.reshape(B, w, p)
    out = apply_coords(mat, coords) * scale
    cexp = coords[None, None, :] if coords.ndim == 1 else coords[:, None, :]

    def vjp(g, cexp=cexp, scale=scale, B=B, w=w, p=p):
        return (g[:, :, None] * cexp).reshape(B, w * p) * scale

    return flat.tape._push(out, (flat.idx,), (vjp,))


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean over the batch of logsumexp(logits) - logits[label], with
    max-subtraction for stability."""
    z = logits.value
    B, q = z.shape
    labels = np.asarray(labels)
    if labels.shape != (B,) or labels.min() < 0 or labels.max() >= q:
        raise ValueError(f"labels must be ints in [0, {q}) with shape ({B},)")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    picked = z[np.arange(B), labels]
    out = np.asarray((lse - picked).mean())

    softmax = ez / ez.sum(axis=1, keepdims=True)

    def vjp(g, softmax=softmax, labels=labels, B=B):
        grad = softmax.copy()
        grad[np.arange(B), labels] -= 1.0
        return grad * (float(g) / B)

    return logits.tape._push(out, (logits.idx,), (vjp,))


def squared_error(y: Var, target: np.ndarray) -> Var:
    """Mean over the batch of the squared Euclidean distance to the target."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != y.value.shape:
        raise ValueError(f"target shape {t.shape} != output shape {y.value.shape}")
    diff = y.value - t
    B = diff.shape[0]
    out = np.asarray(float((diff * diff).sum()) / B)

    def vjp(g, diff=diff, B=B):
        return diff * (2.0 * float(g) / B)

    return y.tape._push(out, (y.idx,), (vjp,))
