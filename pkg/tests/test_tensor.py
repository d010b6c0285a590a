import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from despecular.tensor import (
    ConvParams,
    conv2d,
    fft2d,
    finite_diff,
    gelu,
    identity_conv,
    ifft2d,
    layer_norm_channel,
    make_conv,
    softmax_rows,
)
from despecular.validation import ConfigurationError

from oracles import naive_conv


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_identity_conv_is_identity(rng):
    x = rng.standard_normal((3, 5, 4))
    np.testing.assert_array_equal(conv2d(x, identity_conv(3)), x)


def test_conv_sums_channels():
    x = np.stack([np.full((4, 4), 3.0), np.full((4, 4), 4.0)])
    p = ConvParams(np.ones((1, 2, 1, 1)), np.zeros(1))
    np.testing.assert_array_equal(conv2d(x, p), np.full((1, 4, 4), 7.0))


def test_strided_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((3, 8, 8))
    p = make_conv(rng, 3, 5, k=3, stride=2, padding=1)
    out = conv2d(x, p)
    assert out.shape == (5, 4, 4)
    np.testing.assert_allclose(out, naive_conv(x, p.weight, p.bias, 2, 1), atol=1e-12)


def test_grouped_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((4, 6, 5))
    p = make_conv(rng, 4, 8, k=3, padding=1, groups=4)
    np.testing.assert_allclose(conv2d(x, p), naive_conv(x, p.weight, p.bias, 1, 1, 4), atol=1e-12)


def test_conv_channel_mismatch(rng):
    with pytest.raises(ConfigurationError):
        conv2d(rng.standard_normal((2, 4, 4)), identity_conv(3))


def test_conv_is_linear(rng):
    p = make_conv(rng, 3, 4, k=3, padding=1, bias=False)
    x, y = rng.standard_normal((2, 3, 6, 6))
    np.testing.assert_allclose(conv2d(2.5 * x - 0.5 * y, p), 2.5 * conv2d(x, p) - 0.5 * conv2d(y, p), atol=1e-9)


def test_conv_is_deterministic(rng):
    p = make_conv(rng, 3, 4, k=3, padding=1)
    x = rng.standard_normal((3, 9, 7))
    assert conv2d(x, p).tobytes() == conv2d(x.copy(), p).tobytes()


def test_layer_norm_two_channel_example():
    x = np.array([1.0, 3.0]).reshape(2, 1, 1)
    out = layer_norm_channel(x, np.ones(2), np.zeros(2), eps=1e-12)
    np.testing.assert_allclose(out.ravel(), [-1.0, 1.0], atol=1e-9)


def test_layer_norm_constant_location_gives_beta():
    x = np.full((3, 2, 2), 5.0)
    beta = np.array([0.1, -0.2, 0.3])
    out = layer_norm_channel(x, np.ones(3), beta)
    np.testing.assert_allclose(out, np.broadcast_to(beta[:, None, None], x.shape))


def test_layer_norm_statistics(rng):
    x = rng.standard_normal((4, 5, 5)) * 3 + 1
    out = layer_norm_channel(x, np.ones(4), np.zeros(4), eps=1e-12)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(-50, 50))
def test_layer_norm_shift_invariance(c, shift):
    x = np.random.default_rng(c).standard_normal((c, 3, 3))
    g, b = np.ones(c), np.zeros(c)
    np.testing.assert_allclose(layer_norm_channel(x + shift, g, b), layer_norm_channel(x, g, b), atol=1e-6)


def test_layer_norm_needs_matching_affine():
    with pytest.raises(ConfigurationError):
        layer_norm_channel(np.zeros((3, 2, 2)), np.ones(2), np.zeros(2))


def test_softmax_examples():
    np.testing.assert_allclose(softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    np.testing.assert_allclose(softmax_rows(np.array([[math.log(2), 0.0]])), [[2 / 3, 1 / 3]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_softmax_rows_properties(row):
    a = np.array([row])
    s = softmax_rows(a)
    assert np.all(s >= 0)
    assert abs(s.sum() - 1.0) < 1e-9
    np.testing.assert_allclose(softmax_rows(a + 1000.0), s, atol=1e-12)


def test_gelu_values():
    assert gelu(np.float64(0.0)) == 0.0
    expected = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
    assert abs(gelu(np.float64(1.0)) - expected) < 1e-15
    assert abs(gelu(np.float64(12.0)) - 12.0) < 1e-12
    grid = np.linspace(-0.75, 10, 400)
    assert np.all(np.diff(gelu(grid)) >= 0)


def test_fft_dc_bin_of_constant():
    x = np.full((1, 4, 6), 2.5)
    X = fft2d(x)
    assert X[0, 0, 0] == pytest.approx(2.5 * 24)
    X[0, 0, 0] = 0
    assert np.abs(X).max() < 1e-12


def test_fft_roundtrip_and_parseval(rng):
    x = rng.standard_normal((4, 6, 6))
    X = fft2d(x)
    assert np.abs(ifft2d(X).real - x).max() < 1e-6
    np.testing.assert_allclose((x**2).sum(axis=(1, 2)), (np.abs(X) ** 2).sum(axis=(1, 2)) / 36, rtol=1e-6)
    np.testing.assert_allclose(X[:, 0, 0].real, x.sum(axis=(1, 2)), rtol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7))
def test_fft_hermitian_symmetry(h, w):
    x = np.random.default_rng(h * 10 + w).standard_normal((2, h, w))
    X = fft2d(x)
    ys, xs = np.arange(h), np.arange(w)
    mirrored = X[:, (-ys) % h][:, :, (-xs) % w]
    np.testing.assert_allclose(X, np.conj(mirrored), atol=1e-9 * max(1.0, np.abs(X).max()))


def test_finite_diff_examples():
    np.testing.assert_allclose(finite_diff(lambda v: (v**2).sum(), [1.0, 2.0]), [2.0, 4.0], atol=1e-8)
    np.testing.assert_array_equal(finite_diff(lambda v: 3.0, [1.0, 2.0, 3.0]), 0.0)


def test_finite_diff_softmax_jacobian_row():
    z = np.array([0.3, -1.2, 0.7])
    s = softmax_rows(z[None])[0]
    analytic = s[0] * (np.eye(3)[0] - s)  # d s_0 / d z
    numeric = finite_diff(lambda v: softmax_rows(v[None])[0, 0], z)
    np.testing.assert_allclose(numeric, analytic, atol=1e-9)
