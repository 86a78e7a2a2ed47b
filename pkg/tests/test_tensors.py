"""Truncated tensor algebra: frozen small cases and algebraic laws."""

import numpy as np
import pytest

from sigode.errors import DomainError, ShapeError
from sigode.tensors import (
    TensorShape,
    TruncatedTensor,
    project_level,
    tensor_add,
    tensor_exp,
    tensor_log,
    tensor_mul,
)


def random_tensor(shape, rng, scalar=None):
    t = TruncatedTensor(
        shape,
        [rng.standard_normal((shape.d,) * k) for k in range(shape.N + 1)],
    )
    if scalar is not None:
        t.levels[0] = np.asarray(float(scalar))
    return t


def test_zero_unit_shapes():
    shape = TensorShape(2, 3)
    z = TruncatedTensor.zero(shape)
    u = TruncatedTensor.unit(shape)
    assert z.scalar == 0.0 and u.scalar == 1.0
    assert z.flatten().size == shape.coeff_count == 1 + 2 + 4 + 8


def test_mul_d1_by_hand():
    # polynomials mod x^3: (1 + 2x) (1 + 3x) = 1 + 5x + 6x^2
    shape = TensorShape(1, 2)
    a = TruncatedTensor.from_flat(shape, [1.0, 2.0, 0.0])
    b = TruncatedTensor.from_flat(shape, [1.0, 3.0, 0.0])
    c = tensor_mul(a, b)
    assert np.allclose(c.flatten(), [1.0, 5.0, 6.0])


def test_mul_is_noncommutative_level2():
    shape = TensorShape(2, 2)
    e1 = TruncatedTensor.zero(shape)
    e1.levels[1][0] = 1.0
    e2 = TruncatedTensor.zero(shape)
    e2.levels[1][1] = 1.0
    ab = tensor_mul(e1, e2)
    ba = tensor_mul(e2, e1)
    assert ab.levels[2][0, 1] == 1.0 and ab.levels[2][1, 0] == 0.0
    assert ba.levels[2][1, 0] == 1.0 and ba.levels[2][0, 1] == 0.0


def test_exp_d1_by_hand():
    # exp(2x) mod x^4 = 1 + 2x + 2x^2 + 4/3 x^3
    shape = TensorShape(1, 3)
    a = TruncatedTensor.from_flat(shape, [0.0, 2.0, 0.0, 0.0])
    e = tensor_exp(a)
    assert np.allclose(e.flatten(), [1.0, 2.0, 2.0, 4.0 / 3.0])


def test_log_d1_by_hand():
    # log(1 + x) mod x^3 = x - x^2/2
    shape = TensorShape(1, 2)
    a = TruncatedTensor.from_flat(shape, [1.0, 1.0, 0.0])
    l = tensor_log(a)
    assert np.allclose(l.flatten(), [0.0, 1.0, -0.5])


def test_exp_log_roundtrip_random():
    rng = np.random.default_rng(7)
    for d, N in [(1, 4), (2, 3), (3, 4), (2, 1)]:
        shape = TensorShape(d, N)
        for _ in range(20):
            a = random_tensor(shape, rng, scalar=0.0)
            back = tensor_log(tensor_exp(a))
            assert np.allclose(back.flatten(), a.flatten(), atol=1e-10)
            # exp only accepts zero scalar part, so rebuild g from its log
            # by splitting off the scalar term
            g = random_tensor(shape, rng, scalar=abs(rng.standard_normal()) + 0.5)
            lg = tensor_log(g)
            lg0 = lg.scalar
            lg.levels[0] = np.asarray(0.0)
            rebuilt = tensor_exp(lg) * float(np.exp(lg0))
            assert np.allclose(rebuilt.flatten(), g.flatten(), atol=1e-9 * (1 + g.norm()))


def test_associativity_distributivity():
    rng = np.random.default_rng(11)
    shape = TensorShape(3, 3)
    for _ in range(10):
        a, b, c = (random_tensor(shape, rng) for _ in range(3))
        left = tensor_mul(tensor_mul(a, b), c)
        right = tensor_mul(a, tensor_mul(b, c))
        assert np.allclose(left.flatten(), right.flatten(), atol=1e-10)
        dist = tensor_mul(a, tensor_add(b, c))
        split = tensor_add(tensor_mul(a, b), tensor_mul(a, c))
        assert np.allclose(dist.flatten(), split.flatten(), atol=1e-12)


def test_unit_is_identity():
    rng = np.random.default_rng(3)
    shape = TensorShape(2, 4)
    u = TruncatedTensor.unit(shape)
    a = random_tensor(shape, rng)
    assert np.allclose(tensor_mul(u, a).flatten(), a.flatten())
    assert np.allclose(tensor_mul(a, u).flatten(), a.flatten())


def test_truncation_consistency():
    # computing at depth N+1 then truncating equals computing at depth N
    rng = np.random.default_rng(5)
    big = TensorShape(2, 4)
    small = TensorShape(2, 3)
    a_big = random_tensor(big, rng, scalar=0.0)
    b_big = random_tensor(big, rng, scalar=0.0)
    a_small = TruncatedTensor(small, a_big.levels[:4])
    b_small = TruncatedTensor(small, b_big.levels[:4])
    prod = tensor_mul(a_big, b_big).truncated(3)
    assert np.array_equal(prod.flatten(), tensor_mul(a_small, b_small).flatten())
    assert np.array_equal(
        tensor_exp(a_big).truncated(3).flatten(), tensor_exp(a_small).flatten()
    )


def test_flat_roundtrip_order():
    shape = TensorShape(2, 2)
    t = TruncatedTensor.zero(shape)
    t.levels[0] = np.asarray(9.0)
    t.levels[1][:] = [1.0, 2.0]
    t.levels[2][0, 1] = 12.0  # word (1,2) -> offset 1 within level 2
    flat = t.flatten()
    assert flat.tolist() == [9.0, 1.0, 2.0, 0.0, 12.0, 0.0, 0.0]
    back = TruncatedTensor.from_flat(shape, flat)
    assert np.array_equal(back.flatten(), flat)


def test_errors():
    shape = TensorShape(2, 2)
    other = TensorShape(2, 3)
    a = TruncatedTensor.zero(shape)
    b = TruncatedTensor.zero(other)
    with pytest.raises(ShapeError):
        tensor_add(a, b)
    with pytest.raises(ShapeError):
        tensor_mul(a, b)
    bad = TruncatedTensor.unit(shape)
    with pytest.raises(DomainError):
        tensor_exp(bad)  # nonzero scalar part
    neg = TruncatedTensor.zero(shape)
    with pytest.raises(DomainError):
        tensor_log(neg)  # scalar part 0
    with pytest.raises(ShapeError):
        project_level(a, 3)
    with pytest.raises(ShapeError):
        TensorShape(0, 2)
