"""Datasets, normalization, cached preprocessing, and data generators.

CSV sample format: one row per observation, first column the time stamp,
remaining columns the feature channels; a header row is optional and
declared by the caller.

Preprocessing turns each sample into a log-signature stream over an
equal-index partition (step s).  Streams are cached to a versioned binary
file keyed by dataset content hash, depth, and step, so training twice from
the same inputs never recomputes signatures; coordinates read from cache are
bit-identical to freshly computed ones.
"""

from __future__ import annotations

import csv
import hashlib
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ShapeError
from .lyndon import BASIS_TAG, logsig_dim
from .paths import (
    LogSignature,
    LogSignatureStream,
    PiecewiseLinearPath,
    index_partition,
    logsig_stream,
)
from .tensors import TensorShape

__all__ = [
    "Dataset",
    "load_csv",
    "write_csv",
    "normalize_split",
    "preprocess",
    "StreamCache",
    "gen_synthetic_classification",
    "BrownianDriver",
    "assemble",
]

CACHE_MAGIC = b"SGST"
CACHE_VERSION = 1


@dataclass
class Dataset:
    """Samples with labels (classification) or targets (regression), split
    indices, and normalization state."""

    samples: list[PiecewiseLinearPath]
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None
    split: dict = field(default_factory=dict)  # "train"/"val"/"test" -> indices
    normalized: bool = False
    norm_mean: np.ndarray | None = None  # per embedded channel, time first
    norm_std: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.samples:
            raise ShapeError("dataset needs at least one sample")
        c = self.samples[0].channels
        if any(s.channels != c for s in self.samples):
            raise ShapeError("all samples must share the channel count")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (len(self.samples),):
                raise ShapeError("one label per sample required")

    @property
    def channels(self) -> int:
        return self.samples[0].channels

    def __len__(self) -> int:
        return len(self.samples)


def load_csv(path: str, has_header: bool = False) -> PiecewiseLinearPath:
    """Read one sample; raises with the offending line number on bad input."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: non-numeric value ({exc})")
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise DomainError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, "
                    f"got {len(rows[-1])}"
                )
    if len(rows) < 2:
        raise DomainError(f"{path}: need at least two observation rows")
    if len(rows[0]) < 2:
        raise DomainError(f"{path}: need a time column plus at least one channel")
    arr = np.asarray(rows, dtype=np.float64)
    times, values = arr[:, 0], arr[:, 1:]
    diffs = np.diff(times)
    bad = np.where(diffs <= 0)[0]
    if bad.size:
        lineno = int(bad[0]) + 2 + (1 if has_header else 0)
        raise DomainError(f"{path}:{lineno}: time stamps must strictly increase")
    return PiecewiseLinearPath(times, values)


def write_csv(path: str, sample: PiecewiseLinearPath, header: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(["time"] + [f"x{i}" for i in range(sample.channels)])
        for t, row in zip(sample.times, sample.values):
            writer.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])


def normalize_split(
    dataset: Dataset,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> Dataset:
    """Seeded shuffle into train/val/test (leftover counts go to train), then
    per-channel standardization computed from the training split only.

    Time is standardized like any other channel; feature statistics pool all
    training observations.  Standard deviations are floored at 1e-8.
    """
    n = len(dataset)
    if n < 3:
        raise DomainError("need at least 3 samples to split")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DomainError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test  # rounding remainder goes to train
    split = {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }
    train_embedded = np.concatenate(
        [dataset.samples[i].embedded() for i in split["train"]], axis=0
    )
    mean = train_embedded.mean(axis=0)
    std = np.maximum(train_embedded.std(axis=0), 1e-8)
    samples = []
    for s in dataset.samples:
        emb = (s.embedded() - mean) / std
        samples.append(PiecewiseLinearPath(emb[:, 0], emb[:, 1:]))
    return Dataset(
        samples=samples,
        labels=None if dataset.labels is None else dataset.labels.copy(),
        targets=None if dataset.targets is None else dataset.targets.copy(),
        split=split,
        normalized=True,
        norm_mean=mean,
        norm_std=std,
    )


def _content_hash(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for s in dataset.samples:
        h.update(s.times.astype("<f8").tobytes())
        h.update(s.values.astype("<f8").tobytes())
    if dataset.labels is not None:
        h.update(np.asarray(dataset.labels, dtype="<i8").tobytes())
    return h.hexdigest()


class StreamCache:
    """Binary store for preprocessed streams.

    Layout: magic, version, content hash, embedded dimension v, depth N,
    step, basis order tag, sample count; then per sample the partition and
    the rows of coordinates, all 64-bit little-endian floats.
    """

    def __init__(self, directory: str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _file(self, content_hash: str, N: int, step: int) -> Path:
        return self.directory / f"streams_{content_hash[:16]}_d{N}_s{step}.bin"

    def store(
        self, content_hash: str, v: int, N: int, step: int,
        streams: list[LogSignatureStream],
    ) -> None:
        tag = BASIS_TAG.encode()
        with open(self._file(content_hash, N, step), "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<I", CACHE_VERSION))
            fh.write(struct.pack("<I", len(content_hash)))
            fh.write(content_hash.encode())
            fh.write(struct.pack("<III", v, N, step))
            fh.write(struct.pack("<I", len(tag)))
            fh.write(tag)
            fh.write(struct.pack("<I", len(streams)))
            for stream in streams:
                part = stream.partition.astype("<f8")
                coords = stream.coord_matrix.astype("<f8")
                fh.write(struct.pack("<II", part.size, coords.shape[1]))
                fh.write(part.tobytes())
                fh.write(coords.tobytes())

    def load(
        self, content_hash: str, v: int, N: int, step: int
    ) -> list[LogSignatureStream] | None:
        file = self._file(content_hash, N, step)
        if not file.exists():
            return None
        with open(file, "rb") as fh:
            if fh.read(4) != CACHE_MAGIC:
                return None
            (version,) = struct.unpack("<I", fh.read(4))
            if version != CACHE_VERSION:
                return None
            (hlen,) = struct.unpack("<I", fh.read(4))
            stored_hash = fh.read(hlen).decode()
            sv, sN, sstep = struct.unpack("<III", fh.read(12))
            (taglen,) = struct.unpack("<I", fh.read(4))
            tag = fh.read(taglen).decode()
            if (stored_hash, sv, sN, sstep, tag) != (content_hash, v, N, step, BASIS_TAG):
                return None
            (count,) = struct.unpack("<I", fh.read(4))
            shape = TensorShape(v, N)
            streams = []
            for _ in range(count):
                np1, p = struct.unpack("<II", fh.read(8))
                part = np.frombuffer(fh.read(8 * np1), dtype="<f8").astype(np.float64)
                coords = np.frombuffer(
                    fh.read(8 * (np1 - 1) * p), dtype="<f8"
                ).astype(np.float64).reshape(np1 - 1, p)
                logsigs = [
                    LogSignature(shape, (part[i], part[i + 1]), coords[i])
                    for i in range(np1 - 1)
                ]
                streams.append(LogSignatureStream(shape, part, logsigs, tag))
            return streams


def preprocess(
    dataset: Dataset, depth: int, step: int, cache: StreamCache | None = None
) -> list[LogSignatureStream]:
    """Log-signature streams for every sample over equal-index partitions.

    Requires a normalized dataset.  With a cache, a content/depth/step hit
    returns stored coordinates bit-identically and never recomputes.
    """
    if not dataset.normalized:
        raise DomainError("preprocess expects a normalized dataset")
    length = dataset.samples[0].times.size
    if step >= length:
        warnings.warn(
            f"step {step} >= sample length {length}: single-interval streams",
            stacklevel=2,
        )
    v = dataset.channels + 1
    content_hash = _content_hash(dataset)
    if cache is not None:
        cached = cache.load(content_hash, v, depth, step)
        if cached is not None:
            cache.hits += 1
            return cached
        cache.misses += 1
    streams = []
    for sample in dataset.samples:
        part = index_partition(sample.times, step)
        streams.append(logsig_stream(sample, part, depth))
    if cache is not None:
        cache.store(content_hash, v, depth, step, streams)
    return streams


def gen_synthetic_classification(
    count: int, length: int, classes: int = 2, seed: int = 0
) -> Dataset:
    """Noisy loops whose rotation rate depends on the class.

    Classes share marginal statistics (same radius process, same noise); the
    discriminating structure is the signed rotation, which shows up in the
    level-2 area coordinates of windowed log-signatures.  Labels balanced,
    samples regularly sampled at t_i = i.
    """
    if length < 64:
        raise DomainError("length must be >= 64")
    if classes < 2 or count < classes:
        raise DomainError("need >= 2 classes and count >= classes")
    rng = np.random.default_rng(seed)
    t = np.arange(float(length))
    # rotation rates spread over classes, symmetric about zero
    total_turns = 8.0
    base_rate = 2.0 * np.pi * total_turns / length
    rates = np.linspace(-1.0, 1.0, classes) * base_rate
    labels = np.arange(count) % classes
    labels = rng.permutation(labels)
    samples = []
    for lab in labels:
        phase0 = rng.uniform(0.0, 2.0 * np.pi)
        radius = 1.0 + 0.3 * np.sin(
            2.0 * np.pi * rng.integers(1, 3) * t / length + rng.uniform(0, 2 * np.pi)
        )
        jitter = 0.15 * rng.standard_normal(length).cumsum() / np.sqrt(length)
        angle = phase0 + rates[lab] * t + jitter
        values = np.stack(
            [radius * np.cos(angle), radius * np.sin(angle)], axis=1
        )
        values += 0.05 * rng.standard_normal(values.shape)
        samples.append(PiecewiseLinearPath(t, values))
    return Dataset(samples=samples, labels=labels)


class BrownianDriver:
    """Fine piecewise-linear sample of (t, W_t), seeded and reproducible."""

    def __init__(self, n_segments: int, horizon: float = 1.0, seed: int = 0):
        if n_segments < 1:
            raise DomainError("need at least one segment")
        self.n_segments = n_segments
        self.horizon = horizon
        self.seed = seed
        rng = np.random.default_rng(seed)
        dt = horizon / n_segments
        increments = rng.normal(0.0, np.sqrt(dt), n_segments)
        self.w = np.concatenate([[0.0], increments.cumsum()])
        self.t = np.linspace(0.0, horizon, n_segments + 1)

    def path(self) -> PiecewiseLinearPath:
        return PiecewiseLinearPath(self.t, self.w[:, None])


def assemble(
    dataset: Dataset, streams: list[LogSignatureStream], split: str
) -> dict:
    """Bundle one split into batched training arrays: per-sample coordinate
    stacks (n, m, p), the shared interval widths (m,), first observations
    (n, v), and targets.  All samples must share the partition."""
    idx = dataset.split.get(split)
    if idx is None:
        raise DomainError(f"dataset has no split {split!r}")
    ref = streams[idx[0]].partition
    for i in idx:
        if not np.array_equal(streams[i].partition, ref):
            raise ShapeError("samples in a split must share the partition")
    coords = np.stack([streams[i].coord_matrix for i in idx])
    widths = np.diff(ref)
    x0 = np.stack([dataset.samples[i].embedded()[0] for i in idx])
    target = (
        dataset.labels[idx] if dataset.labels is not None else dataset.targets[idx]
    )
    return {"coords": coords, "widths": widths, "x0": x0, "target": target}
