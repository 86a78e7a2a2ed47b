"""Training loop: Adam, plateau-driven learning rate decay, early stopping
with rollback to the best validation weights.

The schedule follows a fixed recipe: the base learning rate is 0.032 divided
by the batch size; if validation loss has not improved for `plateau_patience`
epochs the rate drops by `plateau_factor`; if it has not improved for
`early_stop_patience` epochs training stops.  The returned model always
carries the best-validation parameter vector, restored bitwise.

Histories record, per epoch: train loss, validation loss, learning rate,
wall-clock seconds, and the peak number of live recorded intermediates (the
memory proxy maintained by the autodiff tape).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import LiveValueMeter
from .errors import DomainError
from .model import (
    NrdeModel,
    adjoint_backward,
    backprop_through_solver,
    forward_batch,
    loss_value,
)

__all__ = ["TrainConfig", "Adam", "EpochRecord", "TrainingHistory", "train", "evaluate"]


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    lr: float | None = None  # default 0.032 / batch_size
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 15
    plateau_factor: float = 10.0
    early_stop_patience: int = 60
    grad_mode: str = "bptt"  # or "adjoint"
    loss_kind: str = "cross_entropy"

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DomainError("batch_size and max_epochs must be >= 1")
        if self.grad_mode not in ("bptt", "adjoint"):
            raise DomainError(f"unknown grad_mode {self.grad_mode!r}")

    @property
    def base_lr(self) -> float:
        return self.lr if self.lr is not None else 0.032 / self.batch_size


class Adam:
    """Standard Adam with bias correction; state keyed by parameter name."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            mhat = self.m[k] / (1.0 - b1**self.t)
            vhat = self.v[k] / (1.0 - b2**self.t)
            out[k] = p - lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_clock_s: float
    peak_live_values: int


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["epoch", "train_loss", "val_loss", "lr", "wall_clock_s",
                 "peak_live_values"]
            )
            for r in self.records:
                writer.writerow(
                    [r.epoch, f"{r.train_loss:.10g}", f"{r.val_loss:.10g}",
                     f"{r.lr:.10g}", f"{r.wall_clock_s:.6f}", r.peak_live_values]
                )


def _dataset_loss(model, data, kind):
    _, y = forward_batch(model, data["coords"], data["widths"], data["x0"])
    return loss_value(y, data["target"], kind)


def evaluate(model: NrdeModel, data: dict, kind: str = "cross_entropy"):
    """Loss and, for classification, accuracy (argmax, ties to the lowest
    class index) on one assembled split."""
    _, y = forward_batch(model, data["coords"], data["widths"], data["x0"])
    loss = loss_value(y, data["target"], kind)
    if kind == "cross_entropy":
        pred = np.argmax(y, axis=1)
        return loss, float((pred == np.asarray(data["target"])).mean())
    return loss, None


def train(
    model: NrdeModel,
    train_data: dict,
    val_data: dict,
    config: TrainConfig,
    meter: LiveValueMeter | None = None,
) -> TrainingHistory:
    """Run the training loop in place on `model`.

    Split data comes as dicts with keys "coords" (n, m, p), "widths" (m,),
    "x0" (n, v), and "target" (labels or regression targets); all samples in
    a split share the partition.  Deterministic for a fixed config and seed.
    """
    for key in ("coords", "widths", "x0", "target"):
        if key not in train_data or key not in val_data:
            raise DomainError(f"missing data key {key!r}")
    if meter is None:
        meter = LiveValueMeter()
    rng = np.random.default_rng(config.seed)
    n = train_data["coords"].shape[0]
    params = {k: v.copy() for k, v in model.param_items()}
    opt = Adam(params, config.beta1, config.beta2, config.eps)
    lr = config.base_lr

    history = TrainingHistory()
    best_params = model.pack()
    epochs_since_best = 0
    epochs_since_plateau_action = 0
    backward = (
        backprop_through_solver if config.grad_mode == "bptt" else adjoint_backward
    )

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        meter.reset_peak()
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = backward(
                model,
                train_data["coords"][idx],
                train_data["widths"],
                train_data["x0"][idx],
                np.asarray(train_data["target"])[idx],
                config.loss_kind,
                meter=meter,
            )
            batch_losses.append(loss)
            params = opt.step(params, grads, lr)
            for k, v in params.items():
                model.set_param(k, v)
        val_loss = _dataset_loss(model, val_data, config.loss_kind)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss,
            lr=lr,
            wall_clock_s=time.perf_counter() - t0,
            peak_live_values=meter.peak,
        )
        history.records.append(record)

        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_params = model.pack()
            epochs_since_best = 0
            epochs_since_plateau_action = 0
        else:
            epochs_since_best += 1
            epochs_since_plateau_action += 1
            if epochs_since_best >= config.early_stop_patience:
                history.stopped_early = True
                break
            if epochs_since_plateau_action >= config.plateau_patience:
                lr /= config.plateau_factor
                epochs_since_plateau_action = 0

    model.unpack(best_params)  # bitwise restore of the best-validation weights
    return history
