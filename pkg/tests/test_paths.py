"""Signatures and log-signatures of piecewise-linear paths."""

import numpy as np
import pytest

from sigode.errors import DomainError, ShapeError
from sigode.lyndon import enumerate_lyndon
from sigode.paths import (
    PiecewiseLinearPath,
    brute_force_signature,
    index_partition,
    log_signature,
    logsig_stream,
    path_signature,
    segment_signature,
)
from sigode.tensors import TensorShape, tensor_exp, tensor_log, tensor_mul


def random_path(rng, n_samples=6, channels=1, t_end=1.0):
    # jittered regular grid: keeps segment widths bounded below so slopes
    # (and quadrature constants in the brute-force check) stay moderate
    base = np.linspace(0.0, t_end, n_samples)
    dt = base[1] - base[0]
    times = base + rng.uniform(-0.3 * dt, 0.3 * dt, n_samples)
    times[0], times[-1] = 0.0, t_end
    values = rng.standard_normal((n_samples, channels))
    return PiecewiseLinearPath(times, values)


def two_channel_square_signature():
    """Signature tensor of the unit two-step path along e1 then e2, depth 2,
    computed from segment exponentials (Chen)."""
    shape = TensorShape(2, 2)
    from sigode.tensors import TruncatedTensor

    s1 = TruncatedTensor.zero(shape)
    s1.levels[1][0] = 1.0
    s2 = TruncatedTensor.zero(shape)
    s2.levels[1][1] = 1.0
    return tensor_mul(tensor_exp(s1), tensor_exp(s2))


def test_axis_moves_by_hand():
    sig = two_channel_square_signature()
    lvl2 = sig.levels[2]
    assert np.allclose(sig.levels[1], [1.0, 1.0])
    assert lvl2[0, 0] == 0.5 and lvl2[1, 1] == 0.5
    assert lvl2[0, 1] == 1.0 and lvl2[1, 0] == 0.0
    log = tensor_log(sig)
    # Lyndon coords: "1" -> 1, "2" -> 1, "12" -> 1/2
    from sigode.lyndon import compress

    coords = compress(log, enumerate_lyndon(2, 2))
    assert np.allclose(coords, [1.0, 1.0, 0.5])


def test_time_always_adjoined():
    path = PiecewiseLinearPath([0.0, 1.0], [[0.0], [1.0]])
    sig = path_signature(path, (0.0, 1.0), 2)
    assert sig.shape.d == 2  # time + one feature
    assert np.allclose(sig.levels[1], [1.0, 1.0])


def test_level1_is_increment():
    rng = np.random.default_rng(0)
    path = random_path(rng, n_samples=8, channels=2)
    a, b = 0.13, 0.87
    sig = path_signature(path, (a, b), 3)
    inc = path.eval_embedded(np.array([b]))[0] - path.eval_embedded(np.array([a]))[0]
    assert np.allclose(sig.levels[1], inc, atol=1e-12)
    ls = log_signature(path, (a, b), 3)
    assert np.allclose(ls.coords[:3], inc, atol=1e-12)


def test_chen_multiplicativity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        path = random_path(rng, n_samples=7, channels=1)
        t = float(rng.uniform(0.2, 0.8))
        left = path_signature(path, (0.0, t), 3)
        right = path_signature(path, (t, 1.0), 3)
        whole = path_signature(path, (0.0, 1.0), 3)
        assert np.allclose(
            tensor_mul(left, right).flatten(), whole.flatten(), atol=1e-12
        )


def test_shuffle_identity():
    # S^12 + S^21 == S^1 * S^2 for every path
    rng = np.random.default_rng(2)
    for _ in range(20):
        path = random_path(rng, n_samples=6, channels=1)
        sig = path_signature(path, (0.0, 1.0), 2)
        lvl1, lvl2 = sig.levels[1], sig.levels[2]
        lhs = lvl2[0, 1] + lvl2[1, 0]
        rhs = lvl1[0] * lvl1[1]
        assert abs(lhs - rhs) <= 1e-12 * (1.0 + abs(rhs))


def test_reparameterization_invariance():
    # re-sampling inside a straight piece changes nothing
    path = PiecewiseLinearPath([0.0, 2.0], [[0.0], [4.0]])
    resampled = PiecewiseLinearPath([0.0, 0.5, 1.3, 2.0], [[0.0], [1.0], [2.6], [4.0]])
    a = path_signature(path, (0.0, 2.0), 3)
    b = path_signature(resampled, (0.0, 2.0), 3)
    assert np.allclose(a.flatten(), b.flatten(), atol=1e-12)


def test_translation_invariance():
    rng = np.random.default_rng(3)
    path = random_path(rng, n_samples=5, channels=2)
    shifted = PiecewiseLinearPath(path.times, path.values + 7.5)
    a = path_signature(path, (0.0, 1.0), 3)
    b = path_signature(shifted, (0.0, 1.0), 3)
    assert np.allclose(a.flatten(), b.flatten(), atol=1e-12)


def test_brute_force_level1_exact():
    rng = np.random.default_rng(4)
    path = random_path(rng, n_samples=9, channels=2)
    bf = brute_force_signature(path, (0.1, 0.9), 1, substeps=17)
    inc = (
        path.eval_embedded(np.array([0.9]))[0]
        - path.eval_embedded(np.array([0.1]))[0]
    )
    assert np.allclose(bf.levels[1], inc, atol=1e-12)


def test_brute_force_agrees_with_chen():
    rng = np.random.default_rng(5)
    for _ in range(5):
        path = random_path(rng, n_samples=6, channels=1)
        a = path_signature(path, (0.0, 1.0), 3)
        b = brute_force_signature(path, (0.0, 1.0), 3, substeps=10_000)
        assert np.allclose(a.flatten(), b.flatten(), atol=1e-6)


def test_log_signature_chen_consistency():
    # product of per-interval signature exponentials equals the whole signature
    rng = np.random.default_rng(6)
    path = random_path(rng, n_samples=10, channels=1)
    partition = index_partition(path.times, 3)
    stream = logsig_stream(path, partition, 3)
    prod = tensor_exp(stream.logsigs[0].tensor())
    for ls in stream.logsigs[1:]:
        prod = tensor_mul(prod, tensor_exp(ls.tensor()))
    whole = path_signature(path, path.domain, 3)
    assert np.allclose(prod.flatten(), whole.flatten(), atol=1e-10)


def test_index_partition_shapes():
    times = np.arange(11.0)
    part = index_partition(times, 4)
    assert part.tolist() == [0.0, 4.0, 8.0, 10.0]  # last interval shorter
    part1 = index_partition(times, 1)
    assert np.array_equal(part1, times)


def test_stream_coord_matrix_and_widths():
    rng = np.random.default_rng(7)
    path = random_path(rng, n_samples=9, channels=1)
    partition = index_partition(path.times, 2)
    stream = logsig_stream(path, partition, 2)
    assert stream.coord_matrix.shape == (len(stream), 3)
    assert np.allclose(stream.widths, np.diff(partition))


def test_errors():
    with pytest.raises(DomainError):
        PiecewiseLinearPath([0.0, 0.0, 1.0], [[0.0], [1.0], [2.0]])
    with pytest.raises(ShapeError):
        PiecewiseLinearPath([0.0, 1.0], [[0.0]])
    path = PiecewiseLinearPath([0.0, 1.0], [[0.0], [1.0]])
    with pytest.raises(DomainError):
        path_signature(path, (0.5, 0.5), 2)  # degenerate
    with pytest.raises(DomainError):
        path_signature(path, (0.0, 2.0), 2)  # outside domain
    with pytest.raises(DomainError):
        logsig_stream(path, np.array([0.0, 0.5]), 2)  # partition must reach end
