"""Continuous-time sequence models driven by windowed log-signatures.

The hidden state starts at xi(x_0) (a small network reading the first
time-augmented observation), then follows

    dZ/dt = fhat(Z) . c_i / width_i        on the i-th partition interval,

where fhat is a matrix-valued network (hidden width w, output reshaped to
w x p) and c_i are the interval's log-signature coordinates.  Output is a
linear readout of the hidden state.  Integration is fixed-step RK4.

Two gradient routes are provided and must agree:

* backprop_through_solver differentiates the discrete forward computation
  exactly, holding every intermediate on one tape;
* adjoint_backward integrates the continuous adjoint equations backward,
  restarted on each interval from checkpointed endpoints, so live memory
  stays at one checkpoint per interval plus a per-stage scratch tape.

Raw (untaped) and traced forward passes perform the same float operations
in the same order, so they agree bitwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import LiveValueMeter, Tape
from .errors import DomainError, ShapeError
from .lyndon import logsig_dim
from .paths import LogSignatureStream, PiecewiseLinearPath
from .solvers import OdeSolveConfig

__all__ = [
    "Mlp",
    "NrdeModel",
    "nrde_field",
    "nrde_forward",
    "forward_batch",
    "loss_value",
    "ncde_reference_forward",
    "backprop_through_solver",
    "adjoint_backward",
    "save_model",
    "load_model",
]

CHECKPOINT_MAGIC = b"SGMD"
CHECKPOINT_VERSION = 1


def _glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_out, fan_in))


class Mlp:
    """Fully connected layers: rectifier between hidden layers, hyperbolic
    tangent on the final hidden layer, linear output.  A single-layer net is
    purely linear.  Weights start uniform in +-sqrt(6 / (fan_in + fan_out)),
    biases at zero."""

    def __init__(self, widths: list[int], rng: np.random.Generator, name: str):
        if len(widths) < 2:
            raise ShapeError("an Mlp needs at least input and output widths")
        self.widths = list(widths)
        self.name = name
        self.weights = [
            _glorot_uniform(rng, widths[i + 1], widths[i])
            for i in range(len(widths) - 1)
        ]
        self.biases = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def param_items(self):
        for i in range(self.n_layers):
            yield f"{self.name}.w{i}", self.weights[i]
            yield f"{self.name}.b{i}", self.biases[i]

    def set_param(self, key: str, value: np.ndarray) -> None:
        kind, idx = key.rsplit(".", 1)[-1][0], int(key.rsplit(".", 1)[-1][1:])
        store = self.weights if kind == "w" else self.biases
        if store[idx].shape != value.shape:
            raise ShapeError(f"shape mismatch for {key}")
        store[idx] = value

    def apply(self, x: np.ndarray) -> np.ndarray:
        for i in range(self.n_layers):
            x = x @ self.weights[i].T + self.biases[i]
            if i < self.n_layers - 1:
                x = np.tanh(x) if i == self.n_layers - 2 else np.maximum(x, 0.0)
        return x

    def apply_traced(self, x, leaves: dict) -> ad.Var:
        for i in range(self.n_layers):
            x = ad.bias(
                ad.matmul(x, leaves[f"{self.name}.w{i}"]),
                leaves[f"{self.name}.b{i}"],
            )
            if i < self.n_layers - 1:
                x = ad.tanh(x) if i == self.n_layers - 2 else ad.relu(x)
        return x


class NrdeModel:
    """Initial network, matrix-valued field network, linear readout, plus the
    preprocessing contract (depth, step) and solver configuration the model
    was trained under."""

    def __init__(
        self,
        in_channels: int,
        hidden_dim: int,
        out_dim: int,
        depth: int,
        step: int,
        field_layers: int = 2,
        field_multiplier: int = 2,
        config: OdeSolveConfig = OdeSolveConfig(),
        seed: int = 0,
    ):
        if in_channels < 1 or hidden_dim < 1 or out_dim < 1:
            raise ShapeError("dimensions must be positive")
        if depth < 1 or step < 1:
            raise DomainError("depth and step must be >= 1")
        self.in_channels = in_channels
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.depth = depth
        self.step = step
        self.field_layers = field_layers
        self.field_multiplier = field_multiplier
        self.config = config
        self.seed = seed
        self.logsig_channels = logsig_dim(in_channels, depth)
        rng = np.random.default_rng(seed)
        w, p = hidden_dim, self.logsig_channels
        self.init_net = Mlp([in_channels, w, w], rng, "init")
        self.field_net = Mlp(
            [w] + [field_multiplier * w] * field_layers + [w * p], rng, "field"
        )
        self.readout = Mlp([w, out_dim], rng, "readout")

    @property
    def nets(self) -> list[Mlp]:
        return [self.init_net, self.field_net, self.readout]

    def param_items(self):
        for net in self.nets:
            yield from net.param_items()

    def param_dict(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.param_items()}

    def set_param(self, key: str, value: np.ndarray) -> None:
        prefix = key.split(".", 1)[0]
        for net in self.nets:
            if net.name == prefix:
                net.set_param(key, value)
                return
        raise KeyError(key)

    def pack(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in self.param_items()])

    def unpack(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        off = 0
        for key, v in list(self.param_items()):
            n = v.size
            self.set_param(key, flat[off : off + n].reshape(v.shape).copy())
            off += n
        if off != flat.size:
            raise ShapeError(f"parameter vector has {flat.size} entries, needs {off}")


def nrde_field(
    model: NrdeModel, z: np.ndarray, coords: np.ndarray, width: float
) -> np.ndarray:
    """dZ/dt on one interval: the field network's matrix output applied to
    the interval's log-signature coordinates, divided by the interval width."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    w, p = model.hidden_dim, model.logsig_channels
    flat = model.field_net.apply(z)
    out = ad.apply_coords(flat.reshape(z.shape[0], w, p), np.asarray(coords)) * (
        1.0 / width
    )
    return out if out.shape[0] > 1 else out[0]


def _check_stream_arrays(model, coords, widths):
    """coords: (m, p) for one stream shared by the batch, or (B, m, p) for
    per-sample streams over a common partition; widths always (m,)."""
    coords = np.asarray(coords, dtype=np.float64)
    widths = np.asarray(widths, dtype=np.float64)
    if coords.ndim not in (2, 3) or coords.shape[-1] != model.logsig_channels:
        raise ShapeError(
            f"coords must be (m, {model.logsig_channels}) or "
            f"(B, m, {model.logsig_channels}), got {coords.shape}"
        )
    m = coords.shape[-2]
    if widths.shape != (m,) or np.any(widths <= 0.0):
        raise ShapeError("widths must be positive, one per interval")
    return coords, widths


def _interval_coords(coords: np.ndarray, i: int) -> np.ndarray:
    return coords[i] if coords.ndim == 2 else coords[:, i, :]


def _forward_raw(model, coords, widths, x0, collect_traj=False, checkpoints=None):
    """Batched forward pass on plain arrays.  When `checkpoints` is a list,
    interval endpoint states are appended to it (adjoint mode)."""
    substeps = model.config.substeps
    w, p = model.hidden_dim, model.logsig_channels
    z = model.init_net.apply(x0)
    traj = [z] if collect_traj else None
    if checkpoints is not None:
        checkpoints.append(z)
    for i in range(widths.size):
        c, scale = _interval_coords(coords, i), 1.0 / widths[i]
        h = widths[i] / substeps
        for _ in range(substeps):
            B = z.shape[0]
            f = lambda s: (
                ad.apply_coords(model.field_net.apply(s).reshape(B, w, p), c) * scale
            )
            k1 = f(z)
            k2 = f(1.0 * z + (h / 2.0) * k1)
            k3 = f(1.0 * z + (h / 2.0) * k2)
            k4 = f(1.0 * z + h * k3)
            z = (
                1.0 * z
                + (h / 6.0) * k1
                + (h / 3.0) * k2
                + (h / 3.0) * k3
                + (h / 6.0) * k4
            )
        if collect_traj:
            traj.append(z)
        if checkpoints is not None:
            checkpoints.append(z)
    return z, traj


def forward_batch(
    model: NrdeModel,
    coords: np.ndarray,
    widths: np.ndarray,
    x0: np.ndarray,
    output_times: str = "final",
):
    """Hidden trajectory at partition points, shape (m+1, B, w), and readout
    outputs: (B, q) for final-time output, (m+1, B, q) for all times."""
    coords, widths = _check_stream_arrays(model, coords, widths)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x0.shape[1] != model.in_channels:
        raise ShapeError(f"x0 must have {model.in_channels} channels")
    z, traj = _forward_raw(model, coords, widths, x0, collect_traj=True)
    traj = np.stack(traj)
    if output_times == "final":
        return traj, model.readout.apply(z)
    if output_times == "all":
        return traj, np.stack([model.readout.apply(t) for t in traj])
    raise DomainError(f"unknown output_times {output_times!r}")


def nrde_forward(
    model: NrdeModel,
    stream: LogSignatureStream,
    x0: np.ndarray,
    output_times: str = "final",
):
    """Single-sample forward pass from a log-signature stream.  Returns the
    hidden trajectory (m+1, w) and the output (q,) or (m+1, q)."""
    if stream.shape.d != model.in_channels or stream.shape.N != model.depth:
        raise ShapeError(
            f"stream shape ({stream.shape.d}, {stream.shape.N}) does not match "
            f"model ({model.in_channels}, {model.depth})"
        )
    traj, y = forward_batch(
        model,
        stream.coord_matrix,
        stream.widths,
        np.asarray(x0)[None, :],
        output_times,
    )
    return traj[:, 0, :], (y[0] if output_times == "final" else y[:, 0, :])


def loss_value(outputs: np.ndarray, target: np.ndarray, kind: str) -> float:
    """Batch-mean loss on raw arrays: "cross_entropy" over integer labels or
    "squared" Euclidean distance."""
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    B, q = outputs.shape
    if kind == "cross_entropy":
        labels = np.asarray(target)
        if labels.shape != (B,) or labels.min() < 0 or labels.max() >= q:
            raise DomainError(f"labels must be ints in [0, {q})")
        zmax = outputs.max(axis=1, keepdims=True)
        ez = np.exp(outputs - zmax)
        lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
        return float((lse - outputs[np.arange(B), labels]).mean())
    if kind == "squared":
        t = np.asarray(target, dtype=np.float64).reshape(B, q)
        return float(((outputs - t) ** 2).sum() / B)
    raise DomainError(f"unknown loss kind {kind!r}")


def _traced_field(model, leaves, z, c, scale):
    flat = model.field_net.apply_traced(z, leaves)
    return ad.contract_field(
        flat, c, model.hidden_dim, model.logsig_channels, scale
    )


def _forward_traced(model, tape, leaves, coords, widths, x0):
    substeps = model.config.substeps
    z = model.init_net.apply_traced(x0, leaves)
    for i in range(widths.size):
        c, scale = _interval_coords(coords, i), 1.0 / widths[i]
        h = widths[i] / substeps
        for _ in range(substeps):
            k1 = _traced_field(model, leaves, z, c, scale)
            k2 = _traced_field(
                model, leaves, ad.combine([z, k1], [1.0, h / 2.0]), c, scale
            )
            k3 = _traced_field(
                model, leaves, ad.combine([z, k2], [1.0, h / 2.0]), c, scale
            )
            k4 = _traced_field(model, leaves, ad.combine([z, k3], [1.0, h]), c, scale)
            z = ad.combine(
                [z, k1, k2, k3, k4], [1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0]
            )
    return z


def _traced_loss(y: ad.Var, target, kind: str) -> ad.Var:
    if kind == "cross_entropy":
        return ad.cross_entropy(y, target)
    if kind == "squared":
        return ad.squared_error(y, target)
    raise DomainError(f"unknown loss kind {kind!r}")


def backprop_through_solver(
    model: NrdeModel,
    coords: np.ndarray,
    widths: np.ndarray,
    x0: np.ndarray,
    target: np.ndarray,
    kind: str = "cross_entropy",
    meter: LiveValueMeter | None = None,
):
    """Loss and exact gradients of the discretized forward computation.

    The whole solve stays on one tape, so peak live memory grows with the
    number of intervals times substeps."""
    coords, widths = _check_stream_arrays(model, coords, widths)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    with Tape(meter) as tape:
        leaves = {k: tape.leaf(v) for k, v in model.param_items()}
        z = _forward_traced(model, tape, leaves, coords, widths, x0)
        y = model.readout.apply_traced(z, leaves)
        loss = _traced_loss(y, target, kind)
        grads_all = tape.backward(loss)
        grads = {
            k: (
                grads_all[leaf.idx]
                if grads_all[leaf.idx] is not None
                else np.zeros_like(leaf.value)
            )
            for k, leaf in leaves.items()
        }
        return float(loss.value), grads


def _field_vjp(model, leaves_field, z, a, c, scale, meter):
    """F(z), J(z)^T a, and per-parameter (dF/dtheta)^T a for one interval's
    field, via a throwaway tape."""
    with Tape(meter) as tape:
        leaves = {k: tape.leaf(v) for k, v in leaves_field.items()}
        zv = tape.leaf(z)
        out = _traced_field(model, leaves, zv, c, scale)
        grads_all = tape.backward(out, seed=a)
        fval = out.value
        da = grads_all[zv.idx]
        if da is None:
            da = np.zeros_like(z)
        dtheta = {
            k: (
                grads_all[leaf.idx]
                if grads_all[leaf.idx] is not None
                else np.zeros_like(leaf.value)
            )
            for k, leaf in leaves.items()
        }
        return fval, da, dtheta


def adjoint_backward(
    model: NrdeModel,
    coords: np.ndarray,
    widths: np.ndarray,
    x0: np.ndarray,
    target: np.ndarray,
    kind: str = "cross_entropy",
    substeps: int | None = None,
    meter: LiveValueMeter | None = None,
):
    """Loss and gradients via the continuous adjoint, restarted per interval.

    The forward pass stores one checkpoint per partition point; the backward
    pass re-integrates the state inside each interval together with the
    adjoint and the parameter-gradient quadrature (RK4, same substep count as
    the forward unless overridden), resetting the state to the checkpoint at
    each interval boundary.  Gradients approach backprop_through_solver as
    substeps grow; live memory stays at checkpoints plus a stage tape.
    """
    coords, widths = _check_stream_arrays(model, coords, widths)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if substeps is None:
        substeps = model.config.substeps

    checkpoints: list[np.ndarray] = []
    z_final, _ = _forward_raw(model, coords, widths, x0, checkpoints=checkpoints)
    if meter is not None:
        meter.add(len(checkpoints))

    grads = {k: np.zeros_like(v) for k, v in model.param_items()}
    field_params = dict(model.field_net.param_items())

    # readout + loss on a small tape; seeds the adjoint at the final time
    with Tape(meter) as tape:
        leaves = {k: tape.leaf(v) for k, v in model.readout.param_items()}
        zv = tape.leaf(z_final)
        y = model.readout.apply_traced(zv, leaves)
        loss = _traced_loss(y, target, kind)
        grads_all = tape.backward(loss)
        loss_val = float(loss.value)
        a = grads_all[zv.idx]
        for k, leaf in leaves.items():
            if grads_all[leaf.idx] is not None:
                grads[k] += grads_all[leaf.idx]

    for i in range(widths.size - 1, -1, -1):
        c, scale = _interval_coords(coords, i), 1.0 / widths[i]
        h = widths[i] / substeps
        z = checkpoints[i + 1].copy()

        def aug(zs, as_):
            fval, da, dtheta = _field_vjp(
                model, field_params, zs, as_, c, scale, meter
            )
            return -fval, da, dtheta

        for _ in range(substeps):
            dz1, da1, g1 = aug(z, a)
            dz2, da2, g2 = aug(z + (h / 2.0) * dz1, a + (h / 2.0) * da1)
            dz3, da3, g3 = aug(z + (h / 2.0) * dz2, a + (h / 2.0) * da2)
            dz4, da4, g4 = aug(z + h * dz3, a + h * da3)
            z = z + (h / 6.0) * (dz1 + 2.0 * dz2 + 2.0 * dz3 + dz4)
            a = a + (h / 6.0) * (da1 + 2.0 * da2 + 2.0 * da3 + da4)
            for k in g1:
                grads[k] += (h / 6.0) * (g1[k] + 2.0 * g2[k] + 2.0 * g3[k] + g4[k])
        # the re-integrated state is discarded here; the next interval starts
        # from its own checkpoint, so backward drift cannot accumulate

    # chain the adjoint at the initial time through the initial network
    with Tape(meter) as tape:
        leaves = {k: tape.leaf(v) for k, v in model.init_net.param_items()}
        z0 = model.init_net.apply_traced(x0, leaves)
        grads_all = tape.backward(z0, seed=a)
        for k, leaf in leaves.items():
            if grads_all[leaf.idx] is not None:
                grads[k] += grads_all[leaf.idx]

    if meter is not None:
        meter.release(len(checkpoints))
    return loss_val, grads


def ncde_reference_forward(
    model: NrdeModel, path: PiecewiseLinearPath, output_times: str = "final"
):
    """Independent reference: drive dZ/dt = fhat(Z) . Xdot(t) with the
    derivative of the linear interpolant, evaluated pointwise per sample
    interval.  Only meaningful for depth-1 models, where the field network
    consumes raw channels."""
    if model.depth != 1:
        raise DomainError("reference solve applies to depth-1 models")
    pts = path.embedded()
    x0 = pts[0][None, :]
    z = model.init_net.apply(x0)
    w, p = model.hidden_dim, model.logsig_channels
    substeps = model.config.substeps
    traj = [z]
    for i in range(pts.shape[0] - 1):
        dt = path.times[i + 1] - path.times[i]
        xdot = (pts[i + 1] - pts[i]) / dt
        h = dt / substeps
        for _ in range(substeps):
            B = z.shape[0]
            f = lambda s: model.field_net.apply(s).reshape(B, w, p) @ xdot
            k1 = f(z)
            k2 = f(1.0 * z + (h / 2.0) * k1)
            k3 = f(1.0 * z + (h / 2.0) * k2)
            k4 = f(1.0 * z + h * k3)
            z = (
                1.0 * z
                + (h / 6.0) * k1
                + (h / 3.0) * k2
                + (h / 3.0) * k3
                + (h / 6.0) * k4
            )
        traj.append(z)
    traj = np.stack(traj)[:, 0, :]
    if output_times == "final":
        return traj, model.readout.apply(z)[0]
    return traj, np.stack([model.readout.apply(t[None, :])[0] for t in traj])


def save_model(model: NrdeModel, path: str) -> None:
    """Versioned binary checkpoint: header (dims, depth, step, net widths),
    then the flat parameter vector, 64-bit little-endian floats, in
    param_items order (init, field, readout; weight then bias per layer)."""
    widths_blob = b"".join(
        struct.pack("<I", len(net.widths))
        + struct.pack(f"<{len(net.widths)}I", *net.widths)
        for net in model.nets
    )
    header = struct.pack(
        "<4sIIIIIIIII",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        model.in_channels,
        model.hidden_dim,
        model.out_dim,
        model.depth,
        model.step,
        model.field_layers,
        model.field_multiplier,
        model.config.substeps,
    )
    flat = model.pack().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(widths_blob)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())


def load_model(path: str) -> NrdeModel:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize("<4sIIIIIIIII"))
        if len(head) < struct.calcsize("<4sIIIIIIIII") or head[:4] != CHECKPOINT_MAGIC:
            raise DomainError(f"{path} is not a model checkpoint")
        magic, version, v, w, q, depth, step, layers, mult, substeps = struct.unpack(
            "<4sIIIIIIIII", head
        )
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        model = NrdeModel(
            v, w, q, depth, step,
            field_layers=layers,
            field_multiplier=mult,
            config=OdeSolveConfig(substeps=substeps),
        )
        for net in model.nets:
            (n,) = struct.unpack("<I", fh.read(4))
            widths = struct.unpack(f"<{n}I", fh.read(4 * n))
            if list(widths) != net.widths:
                raise DomainError(
                    f"checkpoint widths {list(widths)} do not match {net.widths}"
                )
        (size,) = struct.unpack("<Q", fh.read(8))
        flat = np.frombuffer(fh.read(8 * size), dtype="<f8").astype(np.float64)
    model.unpack(flat)
    return model
