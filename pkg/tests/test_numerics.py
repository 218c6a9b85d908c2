import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hgattack.errors import ShapeError
from hgattack.numerics import matmul, relu, row_softmax, safe_power, scale_rows


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)


def test_matmul_annihilating_product():
    out = matmul([[1, 0], [0, 0]], [[0, 0], [0, 1]])
    assert np.array_equal(out, np.zeros((2, 2)))


def test_matmul_hand_value():
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[5], [6]]), [[17.0], [39.0]])


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


@pytest.mark.parametrize("a, expected", [
    ([[-1.0, 2.0]], [[0.0, 2.0]]),
    ([[0.0, 0.0]], [[0.0, 0.0]]),
    ([[0.5, -0.5], [-3.0, 3.0]], [[0.5, 0.0], [0.0, 3.0]]),
])
def test_relu(a, expected):
    assert np.array_equal(relu(a), expected)


def test_softmax_symmetric():
    assert np.allclose(row_softmax([[0.0, 0.0]]), [[0.5, 0.5]])


def test_softmax_large_inputs_do_not_overflow():
    out = row_softmax([[1000.0, 1000.0, 1000.0]])
    assert np.all(np.isfinite(out))
    assert np.allclose(out, 1.0 / 3.0)


def test_softmax_hand_value():
    assert np.allclose(row_softmax([[0.0, math.log(3.0)]]), [[0.25, 0.75]], atol=1e-15)


def test_scale_rows_cases():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(scale_rows(a, [1.0, 1.0]), a)
    assert np.array_equal(scale_rows(a, [1.0, 0.0])[1], [0.0, 0.0])
    assert np.array_equal(scale_rows([[2.0, 4.0]], [0.5]), [[1.0, 2.0]])


def test_scale_rows_length_mismatch():
    with pytest.raises(ShapeError):
        scale_rows(np.ones((2, 2)), [1.0])


def test_safe_power_zero_convention():
    assert np.array_equal(safe_power([0.0, 4.0], -0.5), [0.0, 0.5])
    assert np.array_equal(safe_power([0.0, 2.0], -1.0), [0.0, 0.5])


def test_kernels_do_not_mutate_inputs():
    a = np.array([[-1.0, 2.0]])
    before = a.copy()
    relu(a)
    row_softmax(a)
    scale_rows(a, [2.0])
    assert np.array_equal(a, before)


finite = st.floats(-1e4, 1e4, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_softmax_rows_sum_to_one(a):
    out = row_softmax(a)
    assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-9)
    assert np.array_equal(out, row_softmax(a))


small = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.data())
def test_matmul_associative(n, k, l, m, data):
    a = data.draw(arrays(np.float64, (n, k), elements=small))
    b = data.draw(arrays(np.float64, (k, l), elements=small))
    c = data.draw(arrays(np.float64, (l, m), elements=small))
    lhs = matmul(matmul(a, b), c)
    rhs = matmul(a, matmul(b, c))
    scale = np.abs(a).max() * np.abs(b).max() * np.abs(c).max() * k * l
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(scale, 1.0)
