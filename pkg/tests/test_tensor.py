import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgdetect import tensor as T
from cgdetect.errors import GeometryError, ShapeError
from oracles import batchnorm_scalar, conv2d_loops, dense_loops, maxpool_loops


def rand_conv_case(rng):
    n, c, h, w = (int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 10)), int(rng.integers(1, 10)))
    k = int(rng.choice([1, 3, 7]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, k // 2 + 1))
    if h + 2 * pad < k or w + 2 * pad < k:
        pad = k // 2 + 1
    co = int(rng.integers(1, 4))
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    kern = rng.standard_normal((co, c, k, k)).astype(np.float32)
    bias = rng.standard_normal(co).astype(np.float32) if rng.random() < 0.5 else None
    return x, T.ConvParams(kern, stride, pad, bias)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
    out = T.conv2d(x, T.ConvParams(np.ones((1, 1, 1, 1), np.float32)))
    np.testing.assert_array_equal(out, x)


def test_conv_zero_kernel(rng):
    x = rng.standard_normal((2, 3, 8, 7)).astype(np.float32)
    out = T.conv2d(x, T.ConvParams(np.zeros((4, 3, 3, 3), np.float32), stride=2, padding=1))
    assert out.shape == (2, 4, 4, 4)
    assert not out.any()


def test_conv_matches_nested_loops(rng):
    for _ in range(40):
        x, p = rand_conv_case(rng)
        ref = conv2d_loops(x, p.kernel, p.stride, p.padding, p.bias)
        got = T.conv2d(x, p)
        assert got.shape == ref.shape
        assert rel_err(got, ref) < 1e-5


def test_conv_errors():
    x = np.zeros((1, 2, 5, 5), np.float32)
    with pytest.raises(ShapeError, match="channels"):
        T.conv2d(x, T.ConvParams(np.zeros((1, 3, 3, 3), np.float32)))
    with pytest.raises(GeometryError):
        T.conv2d(x, T.ConvParams(np.zeros((1, 2, 7, 7), np.float32)))
    with pytest.raises(GeometryError):
        T.ConvParams(np.zeros((1, 2, 1, 1), np.float32), stride=0)


@pytest.mark.parametrize("k", [1, 3, 5, 7])
def test_same_padding_preserves_size(rng, k):
    x = rng.standard_normal((1, 2, 11, 9)).astype(np.float32)
    out = T.conv2d(x, T.ConvParams(rng.standard_normal((3, 2, k, k)).astype(np.float32), 1, (k - 1) // 2))
    assert out.shape[2:] == x.shape[2:]


def test_conv_linearity(rng):
    x = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
    y = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
    p = T.ConvParams(rng.standard_normal((4, 3, 3, 3)).astype(np.float32), 2, 1)
    a, b = 0.7, -1.3
    lhs = T.conv2d(a * x + b * y, p)
    rhs = a * T.conv2d(x, p) + b * T.conv2d(y, p)
    assert rel_err(lhs, rhs) < 1e-5


def test_conv_translation_equivariance(rng):
    x = np.zeros((1, 1, 20, 20), np.float32)
    x[0, 0, 4:12, 4:12] = rng.standard_normal((8, 8))
    s = 3
    shifted = np.roll(x, (s, s), axis=(2, 3))
    p = T.ConvParams(rng.standard_normal((2, 1, 3, 3)).astype(np.float32), 1, 1)
    a, b = T.conv2d(x, p), T.conv2d(shifted, p)
    np.testing.assert_array_equal(a[:, :, 2:14, 2:14], b[:, :, 2 + s:14 + s, 2 + s:14 + s])


def test_conv_is_pure(rng):
    x, p = rand_conv_case(rng)
    x0 = x.copy()
    a, b = T.conv2d(x, p), T.conv2d(x, p)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_array_equal(x, x0)


def test_im2col_row_order():
    x = np.arange(2 * 3 * 3, dtype=np.float32).reshape(1, 2, 3, 3)
    cols = T.im2col(x, 2, 2, 1, 0)
    # first column is the top-left window, channel-major then kh then kw
    np.testing.assert_array_equal(cols[0, :, 0], [0, 1, 3, 4, 9, 10, 12, 13])


def test_batchnorm_identity(rng):
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    one, zero = np.ones(3, np.float32), np.zeros(3, np.float32)
    out = T.batchnorm_infer(x, T.BatchNormParams(one, zero, zero, one, 1e-12))
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_batchnorm_zero_gamma(rng):
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    beta = np.array([1.0, -2.0, 0.5], np.float32)
    p = T.BatchNormParams(np.zeros(3, np.float32), beta, rng.standard_normal(3).astype(np.float32),
                          rng.random(3).astype(np.float32))
    out = T.batchnorm_infer(x, p)
    for c in range(3):
        assert np.all(out[:, c] == beta[c])


def test_batchnorm_scalar_oracle(rng):
    x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
    g, b, m = (rng.standard_normal(3).astype(np.float32) for _ in range(3))
    v = (rng.random(3) + 0.1).astype(np.float32)
    out = T.batchnorm_infer(x, T.BatchNormParams(g, b, m, v))
    np.testing.assert_allclose(out, batchnorm_scalar(x, g, b, m, v, 1e-5), atol=1e-6)


def test_batchnorm_errors():
    v = np.ones(3, np.float32)
    with pytest.raises(ShapeError):
        T.batchnorm_infer(np.zeros((1, 2, 2, 2), np.float32), T.BatchNormParams(v, v, v, v))
    with pytest.raises(ValueError):
        T.BatchNormParams(v, v, v, -v)
    with pytest.raises(ValueError):
        T.BatchNormParams(v, v, v, v, epsilon=0.0)


def test_relu_cases():
    np.testing.assert_array_equal(T.relu(np.array([-1, 0, 2.5], np.float32).reshape(1, 1, 1, 3)).ravel(), [0, 0, 2.5])
    assert not T.relu(-np.ones((1, 2, 3, 3), np.float32)).any()
    pos = np.full((1, 2, 3, 3), 4.0, np.float32)
    np.testing.assert_array_equal(T.relu(pos), pos)


@given(st.lists(st.floats(-1e6, 1e6, width=32), min_size=1, max_size=40))
def test_relu_idempotent(vals):
    x = np.array(vals, np.float32).reshape(1, 1, 1, -1)
    np.testing.assert_array_equal(T.relu(T.relu(x)), T.relu(x))


def test_maxpool_ramp():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(T.maxpool2d(x, (2, 2), 2)[0, 0], [[5, 7], [13, 15]])


def test_maxpool_constant():
    x = np.full((1, 2, 7, 7), -3.0, np.float32)
    out = T.maxpool2d(x, (3, 3), 2, 1)
    assert np.all(out == -3.0)


def test_maxpool_oracle(rng):
    for _ in range(30):
        x = rng.standard_normal((2, 2, int(rng.integers(3, 10)), int(rng.integers(3, 10)))).astype(np.float32)
        k = int(rng.choice([2, 3]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, k // 2 + 1))
        np.testing.assert_array_equal(T.maxpool2d(x, (k, k), stride, pad), maxpool_loops(x, k, k, stride, pad))


def test_global_avg_pool():
    x = np.array([1, 2, 3, 4], np.float32).reshape(1, 1, 2, 2)
    assert T.global_avg_pool(x)[0, 0, 0, 0] == 2.5
    const = np.full((2, 3, 5, 5), 0.1, np.float32)
    np.testing.assert_allclose(T.global_avg_pool(const), 0.1, rtol=1e-6)


def test_global_avg_pool_oracle(rng):
    x = rng.standard_normal((3, 4, 7, 7)).astype(np.float32)
    ref = np.array([[sum(float(v) for v in x[i, c].ravel()) / 49 for c in range(4)] for i in range(3)])
    np.testing.assert_allclose(T.global_avg_pool(x)[:, :, 0, 0], ref, atol=1e-6)


def test_add_properties(rng):
    a = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    b = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(T.add(a, np.zeros_like(a)), a)
    assert not T.add(a, -a).any()
    assert T.add(a, b).tobytes() == T.add(b, a).tobytes()
    with pytest.raises(ShapeError):
        T.add(a, b[:, :1])


def test_dense(rng):
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(T.dense(x, np.eye(4), np.zeros(4)), x)
    b = np.array([1.0, 2.0])
    assert np.all(T.dense(x, np.zeros((4, 2)), b) == b)
    w = rng.standard_normal((4, 2))
    np.testing.assert_allclose(T.dense(x, w, b), dense_loops(x, w, b), atol=1e-6)
    with pytest.raises(ShapeError):
        T.dense(x, np.zeros((3, 2)), b)


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.sampled_from([1, 3, 7]),
       stride=st.integers(1, 3), pad=st.integers(0, 3))
def test_output_size_formula(h, w, k, stride, pad):
    x = np.ones((1, 1, h, w), np.float32)
    p = T.ConvParams(np.ones((1, 1, k, k), np.float32), stride, pad)
    if h + 2 * pad < k or w + 2 * pad < k:
        with pytest.raises(GeometryError):
            T.conv2d(x, p)
        return
    out = T.conv2d(x, p)
    assert out.shape[2:] == ((h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1)
    assert np.isfinite(out).all()
