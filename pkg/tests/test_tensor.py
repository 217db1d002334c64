import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sonarp.tensor import DimensionError, DomainError, elementwise, matvec_affine, reduce, tensor


def test_tensor_scalar_becomes_rank_one():
    t = tensor(3.0)
    assert t.shape == (1,) and t.dtype == np.float32


def test_tensor_rejects_empty_extent():
    with pytest.raises(DimensionError):
        tensor(np.zeros((0, 3)))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_matvec_affine_matches_loops(rows, cols, seed):
    rng = np.random.default_rng(seed)
    w, x, b = rng.normal(size=(rows, cols)), rng.normal(size=cols), rng.normal(size=rows)
    ref = [sum(w[i, j] * x[j] for j in range(cols)) + b[i] for i in range(rows)]
    np.testing.assert_allclose(matvec_affine(w, x, b), ref, atol=1e-12)


def test_matvec_affine_shape_errors():
    with pytest.raises(DimensionError):
        matvec_affine(np.ones((2, 3)), np.ones(2), np.ones(2))
    with pytest.raises(DimensionError):
        matvec_affine(np.ones((2, 3)), np.ones(3), np.ones(3))


def test_elementwise_broadcast_only_scalar():
    a = np.ones((2, 3))
    np.testing.assert_array_equal(elementwise("add", a, 2.0), 3 * a)
    with pytest.raises(DimensionError):
        elementwise("mul", a, np.ones(3))


def test_elementwise_log_domain():
    with pytest.raises(DomainError):
        elementwise("log", np.array([1.0, 0.0]))
    np.testing.assert_allclose(elementwise("exp", np.zeros(2)), 1.0)


def test_unknown_ops():
    with pytest.raises(ValueError):
        elementwise("pow", np.ones(2), 2)
    with pytest.raises(ValueError):
        reduce("median", np.ones(2))


def test_argmax_first_of_ties():
    assert reduce("argmax", np.array([1.0, 3.0, 3.0, 2.0])) == 1
    np.testing.assert_array_equal(reduce("argmax", np.array([[5, 5], [1, 2]]), axis=1), [0, 1])


def test_reduce_errors():
    with pytest.raises(DimensionError):
        reduce("sum", np.ones((2, 2)), axis=2)
    with pytest.raises(DimensionError):
        reduce("max", np.zeros((0,)))


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_reductions_agree_with_numpy(a):
    assert reduce("sum", a) == pytest.approx(a.sum())
    assert reduce("max", a) == a.max()
    assert a[reduce("argmax", a)] == a.max()
