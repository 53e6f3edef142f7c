import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtfn.tensor import (
    DimensionError, NonFiniteError, concat, concat_backward, grad_check, make_rng, matmul,
    reduce_mean, reduce_mean_backward, softmax_rows, softmax_rows_backward, spawn,
)


def triple_loop(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_matches_triple_loop(n, k, m, seed):
    rng = make_rng(seed)
    a, b = rng.standard_normal((n, k)), rng.standard_normal((k, m))
    assert np.max(np.abs(matmul(a, b) - triple_loop(a, b))) <= 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_matmul_batched():
    rng = make_rng(1)
    a, b = rng.standard_normal((3, 2, 4)), rng.standard_normal((4, 5))
    out = matmul(a, b)
    for i in range(3):
        np.testing.assert_allclose(out[i], triple_loop(a[i], b), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 9), st.floats(0.1, 600.0), st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(rows, cols, scale, seed):
    a = make_rng(seed).standard_normal((rows, cols)) * scale
    y = softmax_rows(a)
    assert np.all(y >= 0)
    assert np.max(np.abs(y.sum(axis=-1) - 1.0)) <= 1e-12


def test_softmax_is_shift_invariant_and_stable():
    a = np.array([[1000.0, 1001.0, 999.0]])
    np.testing.assert_allclose(softmax_rows(a), softmax_rows(a - 1000.0), rtol=0, atol=1e-15)
    assert np.all(np.isfinite(softmax_rows(a)))


def test_softmax_backward_sums_to_zero():
    rng = make_rng(2)
    y = softmax_rows(rng.standard_normal((4, 6)))
    g = softmax_rows_backward(rng.standard_normal((4, 6)), y)
    np.testing.assert_allclose(g.sum(axis=-1), 0.0, atol=1e-14)


def test_concat_and_split_round_trip():
    a, b = np.ones((2, 3)), np.zeros((2, 4))
    c = concat([a, b], axis=1)
    assert c.shape == (2, 7)
    pa, pb = concat_backward(c, [3, 4], axis=1)
    np.testing.assert_array_equal(pa, a)
    np.testing.assert_array_equal(pb, b)


def test_concat_errors():
    with pytest.raises(DimensionError):
        concat([np.ones((2, 3)), np.ones((3, 3))], axis=1)
    with pytest.raises(DimensionError):
        concat([], axis=0)
    with pytest.raises(DimensionError):
        concat([np.ones((2, 3))], axis=5)


def test_reduce_mean_backward_spreads_evenly():
    g = reduce_mean_backward(np.array([[3.0, 6.0]]), (1, 3, 2), axis=1)
    np.testing.assert_allclose(g, np.array([[[1.0, 2.0]] * 3]))
    with pytest.raises(DimensionError):
        reduce_mean(np.ones((2, 0)), axis=1)


def test_rng_is_reproducible():
    a = make_rng(123).standard_normal(50)
    b = make_rng(123).standard_normal(50)
    assert a.tobytes() == b.tobytes()
    kids1 = [r.random() for r in spawn(make_rng(5), 3)]
    kids2 = [r.random() for r in spawn(make_rng(5), 3)]
    assert kids1 == kids2 and len(set(kids1)) == 3


def test_grad_check_on_known_function():
    x = make_rng(0).standard_normal(5)

    def fun():
        return float(np.sum(np.sin(x) * x)), [np.cos(x) * x + np.sin(x)]

    assert grad_check(fun, [x]) < 1e-8
    x0 = x.copy()
    grad_check(fun, [x])
    assert x.tobytes() == x0.tobytes()  # inputs restored


def test_grad_check_detects_wrong_gradient():
    x = np.array([1.0, 2.0])
    assert grad_check(lambda: (float(np.sum(x**2)), [x]), [x]) > 0.1


def test_grad_check_rejects_bad_eps_and_nonfinite():
    x = np.array([1.0])
    with pytest.raises(ValueError):
        grad_check(lambda: (0.0, [x]), [x], eps=1e-2)
    with pytest.raises(NonFiniteError), np.errstate(all="ignore"):
        grad_check(lambda: (float(np.log(x[0] - 1.0)), [1 / x]), [x])
