import math

import numpy as np
import pytest

from despecular.attention import (
    attention_backward,
    cca_attention,
    cca_multihead,
    ccat_block,
    channel_window_attention,
    ffn,
    g_dat,
    global_pixel_attention,
    l_hd_dat,
    make_ccat,
    make_ffn,
    make_g_dat,
    make_l_hd_dat,
    make_psat,
    make_qkv,
    make_ssswat,
    mix_value,
    pixel_window_attention,
    psat_block,
    set_attention_hook,
    ssswat_block,
    temperature_value,
    tiled_window_attention,
)
from despecular.gradcheck import grad_check, relative_error
from despecular.network import zero_convolutions
from despecular.tensor import finite_diff, identity_conv
from despecular.validation import ConfigurationError
from despecular.windowing import build_shift_mask, window_partition, window_reverse

from oracles import dense_cca, dense_channel_attention, dense_pixel_attention


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


# ---- cores -----------------------------------------------------------------


def test_pixel_uniform_attention_gives_window_mean():
    z = np.zeros((1, 1, 4))
    v = np.array([[[1.0, 2.0, 3.0, 4.0]]])
    np.testing.assert_allclose(pixel_window_attention(z, z, v, window=2), 2.5)


def test_pixel_mask_dominance():
    z = np.zeros((1, 2, 4))
    v = np.arange(8, dtype=float).reshape(1, 2, 4)
    mask = np.zeros((1, 4, 4))
    mask[0, 1, :] = -100.0
    mask[0, 1, 3] = 0.0
    out = pixel_window_attention(z, z, v, mask=mask, window=2)
    np.testing.assert_allclose(out[0, :, 1], v[0, :, 3], atol=1e-30)


def test_pixel_matches_dense_oracle(rng):
    q, k, v = rng.standard_normal((3, 1, 2, 4))
    out = pixel_window_attention(q, k, v, window=2)
    np.testing.assert_allclose(out, dense_pixel_attention(q, k, v, None, 2), atol=1e-12)


def test_pixel_masked_matches_dense_oracle(rng):
    q, k, v = rng.standard_normal((3, 4, 3, 16))
    mask = build_shift_mask(8, 8, 4, 2)
    out = pixel_window_attention(q, k, v, mask=mask, window=4)
    np.testing.assert_allclose(out, dense_pixel_attention(q, k, v, mask, 4), atol=1e-12)


def test_zero_mask_is_bit_exact(rng):
    q, k, v = rng.standard_normal((3, 4, 3, 16))
    a = pixel_window_attention(q, k, v, mask=np.zeros((4, 16, 16)), window=4)
    b = pixel_window_attention(q, k, v, window=4)
    assert np.array_equal(a, b)


def test_pixel_geometry_errors(rng):
    q = rng.standard_normal((1, 2, 4))
    with pytest.raises(ConfigurationError):
        pixel_window_attention(q, q, rng.standard_normal((1, 2, 9)), window=2)
    with pytest.raises(ConfigurationError):
        pixel_window_attention(q, q, q, mask=np.zeros((2, 4, 4)), window=2)


def test_channel_uniform_mixing():
    z = np.zeros((1, 2, 2))
    v = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    np.testing.assert_allclose(channel_window_attention(z, z, v, 1.0)[0], [[2.0, 3.0], [2.0, 3.0]])


def test_channel_high_temperature_limit(rng):
    q, k, v = rng.standard_normal((3, 1, 3, 4))
    out = channel_window_attention(q, k, v, 1e9)
    np.testing.assert_allclose(out[0], np.broadcast_to(v[0].mean(axis=0), (3, 4)), atol=1e-8)


def test_channel_matches_dense_oracle(rng):
    q, k, v = rng.standard_normal((3, 3, 4, 9))
    np.testing.assert_allclose(channel_window_attention(q, k, v, 0.7), dense_channel_attention(q, k, v, 0.7), atol=1e-12)


def test_channel_rejects_nonpositive_tau(rng):
    q = rng.standard_normal((1, 2, 4))
    with pytest.raises(ConfigurationError):
        channel_window_attention(q, q, q, 0.0)


def test_cca_single_head_is_global_channel_attention(rng):
    c, n = 4, 9
    q, k, v = rng.standard_normal((3, c, n))
    a = cca_attention(q, k, v, 1)
    b = channel_window_attention(q[None], k[None], v[None], math.sqrt(c))[0]
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_cca_uniform_heads():
    v = np.arange(12, dtype=float).reshape(4, 3)
    z = np.zeros((4, 3))
    out = cca_attention(z, z, v, 2)
    np.testing.assert_allclose(out[:2], np.broadcast_to(v[:2].mean(axis=0), (2, 3)))
    np.testing.assert_allclose(out[2:], np.broadcast_to(v[2:].mean(axis=0), (2, 3)))


def test_cca_matches_dense_oracle(rng):
    x = rng.standard_normal((4, 3, 3))
    q, k, v = (t.reshape(4, 9) for t in rng.standard_normal((3, 4, 3, 3)))
    np.testing.assert_allclose(cca_attention(q, k, v, 2), dense_cca(q, k, v, 2), atol=1e-12)
    with pytest.raises(ConfigurationError):
        cca_attention(q, k, v, 3)
    proj = make_qkv(rng, 4)
    out = cca_multihead(x, proj, 2, identity_conv(4))
    flat = x.reshape(4, 9)
    expected = dense_cca(proj.wq.weight[:, :, 0, 0] @ flat, proj.wk.weight[:, :, 0, 0] @ flat,
                         proj.wv.weight[:, :, 0, 0] @ flat, 2)
    np.testing.assert_allclose(out.reshape(4, 9), expected, atol=1e-12)


def test_global_pixel_attention_uniform_is_spatial_mean(rng):
    v = rng.standard_normal((2, 9))
    z = np.zeros((2, 9))
    out = global_pixel_attention(z, z, v, 3, 3)
    np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True), (2, 9)), atol=1e-15)


def test_global_pixel_attention_matches_oracle(rng):
    q, k, v = rng.standard_normal((3, 2, 9))
    out = global_pixel_attention(q, k, v, 3, 3)
    np.testing.assert_allclose(out, dense_pixel_attention(q[None], k[None], v[None], None, 3.0)[0], atol=1e-12)


def test_rows_sum_to_one_hook(rng):
    seen = []

    def hook(kind, attn):
        seen.append(kind)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-9)

    old = set_attention_hook(hook)
    try:
        x = rng.random((4, 10, 10))
        l_hd_dat(x, make_l_hd_dat(rng, 4), 4, 2)
        g_dat(x, make_g_dat(rng, 4, 2))
    finally:
        set_attention_hook(old)
    assert {"pixel", "channel", "cca"} <= set(seen)


def test_window_permutation_equivariance(rng):
    q, k, v = rng.standard_normal((3, 4, 2, 16))
    mask = np.array(build_shift_mask(8, 8, 4, 2))
    perm = np.array([2, 0, 3, 1])
    base = pixel_window_attention(q, k, v, mask=mask, window=4)
    permuted = pixel_window_attention(q[perm], k[perm], v[perm], mask=mask[perm], window=4)
    np.testing.assert_array_equal(permuted, base[perm])


@pytest.mark.parametrize("mode", ["pixel", "channel"])
def test_tiled_kernel_matches_whole_map(rng, mode):
    q, k, v = rng.standard_normal((3, 3, 12, 8))
    mask = build_shift_mask(12, 8, 4, 1) if mode == "pixel" else None
    tiled = tiled_window_attention(q, k, v, mode, 4, tau=0.8, mask=mask)
    parts = [window_partition(t, 4) for t in (q, k, v)]
    if mode == "pixel":
        whole = pixel_window_attention(*parts, mask=mask, window=4)
    else:
        whole = channel_window_attention(*parts, 0.8)
    np.testing.assert_allclose(tiled, window_reverse(whole), atol=1e-14)


# ---- backward ----------------------------------------------------------------


def _fd_check(loss, arrays, grads):
    for name, arr in arrays.items():
        def f(flat, name=name):
            trial = dict(arrays)
            trial[name] = flat.reshape(arr.shape)
            return loss(**trial)

        numeric = finite_diff(f, arr).reshape(arr.shape)
        assert relative_error(grads[name], numeric) < 1e-5, name


def test_pixel_backward_seed7():
    rng = np.random.default_rng(7)
    arrays = {n: rng.standard_normal((1, 2, 4)) for n in "qkv"}
    up = rng.standard_normal((1, 2, 4))
    grads = attention_backward("pixel", {**arrays, "window": 2}, up)
    _fd_check(lambda q, k, v: float((pixel_window_attention(q, k, v, window=2) * up).sum()), arrays, grads)


def test_channel_backward_with_tau():
    rng = np.random.default_rng(8)
    arrays = {n: rng.standard_normal((1, 3, 4)) for n in "qkv"}
    up = rng.standard_normal((1, 3, 4))
    grads = attention_backward("channel", {**arrays, "tau": 1.7}, up)
    _fd_check(lambda q, k, v: float((channel_window_attention(q, k, v, 1.7) * up).sum()), arrays, grads)
    d_tau = finite_diff(lambda t: float((channel_window_attention(*arrays.values(), t[0]) * up).sum()), [1.7])
    assert relative_error(grads["tau"], d_tau) < 1e-5


def test_cca_backward():
    rng = np.random.default_rng(9)
    arrays = {n: rng.standard_normal((4, 9)) for n in "qkv"}
    up = rng.standard_normal((4, 9))
    grads = attention_backward("cca", {**arrays, "heads": 2}, up)
    _fd_check(lambda q, k, v: float((cca_attention(q, k, v, 2) * up).sum()), arrays, grads)


def test_backward_unknown_kind():
    with pytest.raises(ConfigurationError):
        attention_backward("dense", {}, None)


@pytest.mark.parametrize("block", ["all", "p_ssswa", "c_ssswa", "cca", "ln", "ssim", "composite", "pixel"])
def test_grad_check_report(block):
    report = grad_check(block, seed=3)
    d = report.to_dict()
    assert set(d) == {"block", "seed", "params", "pass"}
    assert d["pass"] is True
    assert all(p["max_rel_err"] < 1e-4 for p in d["params"])


def test_grad_check_unknown_block():
    with pytest.raises(ConfigurationError):
        grad_check("nope")


# ---- blocks -------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["pixel", "channel"])
def test_ssswat_shape_with_padding(rng, mode):
    x = rng.random((4, 10, 10))
    out = ssswat_block(x, make_ssswat(rng, 4, mode), 4, 2)
    assert out.shape == x.shape and np.all(np.isfinite(out))


@pytest.mark.parametrize("mode", ["pixel", "channel"])
def test_ssswat_zero_weights_identity(rng, mode):
    x = rng.random((4, 10, 10))
    p = zero_convolutions(make_ssswat(rng, 4, mode))
    np.testing.assert_array_equal(ssswat_block(x, p, 4, 2), x)


@pytest.mark.parametrize("mode,expected", [("pixel", 1.4983992266880524), ("channel", 1.4808371817276869)])
def test_ssswat_seeded_regression(mode, expected):
    x = np.random.default_rng(12).random((4, 10, 10))
    out = ssswat_block(x, make_ssswat(np.random.default_rng(11), 4, mode), 4, 2)
    assert abs(np.abs(out).max() - expected) < 1e-9


def test_ssswat_width_mismatch(rng):
    with pytest.raises(ConfigurationError):
        ssswat_block(rng.random((3, 8, 8)), make_ssswat(rng, 4, "pixel"), 4, 2)


def test_l_hd_dat_mixing(rng):
    x = rng.random((4, 9, 7))
    p = make_l_hd_dat(rng, 4)
    pix = ssswat_block(x, p.pixel, 4, 2)
    chan = ssswat_block(x, p.channel, 4, 2)
    np.testing.assert_allclose(l_hd_dat(x, p, 4, 2), 0.5 * pix + 0.5 * chan, atol=1e-15)
    p.alpha = np.array(40.0)
    np.testing.assert_allclose(l_hd_dat(x, p, 4, 2), pix, atol=1e-12)
    p.alpha = np.array(-1.3)
    a = mix_value(p.alpha)
    assert 0 < a < 1
    np.testing.assert_allclose(l_hd_dat(x, p, 4, 2), a * pix + (1 - a) * chan, atol=1e-15)


def test_l_hd_dat_zero_weights_identity(rng):
    x = rng.random((4, 8, 8))
    np.testing.assert_array_equal(l_hd_dat(x, zero_convolutions(make_l_hd_dat(rng, 4)), 4, 2), x)


def test_parameterisations():
    assert mix_value(0.0) == 0.5
    assert temperature_value(0.0) == 1.0
    assert 0 < mix_value(-700) < mix_value(700) <= 1.0


def test_ccat_block(rng):
    x = rng.random((4, 6, 6))
    out = ccat_block(x, make_ccat(np.random.default_rng(13), 4, 2))
    assert out.shape == x.shape
    x2 = np.random.default_rng(14).random((4, 6, 6))
    assert abs(np.abs(ccat_block(x2, make_ccat(np.random.default_rng(13), 4, 2))).max() - 2.0081910801639618) < 1e-9
    np.testing.assert_array_equal(ccat_block(x, zero_convolutions(make_ccat(rng, 4, 2))), x)


def test_psat_block(rng):
    x = rng.random((2, 3, 3))
    assert psat_block(x, make_psat(rng, 2)).shape == x.shape
    np.testing.assert_array_equal(psat_block(x, zero_convolutions(make_psat(rng, 2))), x)


def test_g_dat(rng):
    x = rng.random((4, 3, 5))
    p = make_g_dat(rng, 4, 2)
    c, s = ccat_block(x, p.ccat), psat_block(x, p.psat)
    np.testing.assert_allclose(g_dat(x, p), 0.5 * c + 0.5 * s, atol=1e-15)
    p.beta = np.array(40.0)
    np.testing.assert_allclose(g_dat(x, p), c, atol=1e-12)
    np.testing.assert_array_equal(g_dat(x, zero_convolutions(make_g_dat(rng, 4, 2))), x)


def test_ffn(rng):
    x = rng.random((3, 5, 5))
    p = make_ffn(rng, 3)
    assert ffn(x, p).shape == x.shape
    assert not ffn(x, zero_convolutions(make_ffn(rng, 3))).any()
    p = make_ffn(rng, 3)
    p.conv_mid.weight[...] = 0
    p.conv_mid.bias[...] = 0
    p.conv_out.bias[...] = 0
    assert not ffn(x, p).any()


def test_ffn_matches_loop_oracle(rng):
    from oracles import naive_conv

    def gelu_ref(t):
        return np.vectorize(lambda u: 0.5 * u * (1 + math.erf(u / math.sqrt(2))))(t)

    x = rng.random((2, 4, 4))
    p = make_ffn(rng, 2)
    h = gelu_ref(naive_conv(x, p.conv_in.weight, p.conv_in.bias))
    h = gelu_ref(naive_conv(h, p.conv_mid.weight, p.conv_mid.bias, 1, 1, 4))
    expected = naive_conv(h, p.conv_out.weight, p.conv_out.bias)
    np.testing.assert_allclose(ffn(x, p), expected, atol=1e-12)
