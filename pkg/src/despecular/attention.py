"""Attention cores, transformer blocks and the learnable mixers.

Cores work on arrays laid out as (n_windows, C, M*M) for the windowed
kernels and (C, N) for the global ones. Pixel attention normalises over the
key positions and aggregates values as ``V @ A.T``; channel attention
normalises over key channels and returns ``A @ V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._counting import record_matmul
from .spectral import FreqProcessorParams, frequency_processor, make_freq_processor
from .tensor import (
    ConvParams,
    LayerNormParams,
    apply_layer_norm,
    conv2d,
    gelu,
    make_conv,
    make_layer_norm,
    softmax_rows,
)
from .validation import ConfigurationError
from .windowing import (
    WindowedTensor,
    build_shift_mask,
    cyclic_shift,
    inverse_cyclic_shift,
    pad_to_multiple,
    window_partition,
    window_reverse,
)

_attention_hook = None


def set_attention_hook(fn):
    """Install ``fn(kind, weights)`` to observe every attention matrix; returns the old hook."""
    global _attention_hook
    old, _attention_hook = _attention_hook, fn
    return old


def _observe(kind, weights):
    if _attention_hook is not None:
        _attention_hook(kind, weights)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def mix_value(raw) -> float:
    """Convex mixing weight in (0, 1) from its unconstrained parameter."""
    return float(sigmoid(np.asarray(raw, dtype=np.float64)))


def temperature_value(raw) -> float:
    return float(np.exp(np.asarray(raw, dtype=np.float64)))


def _unwrap(*tensors):
    geometry = None
    arrays = []
    for t in tensors:
        if isinstance(t, WindowedTensor):
            geometry = t.geometry
            arrays.append(t.data)
        else:
            arrays.append(np.asarray(t))
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ConfigurationError(f"Q/K/V geometry mismatch: {shape} vs {a.shape}")
    return arrays, geometry


def _rewrap(data, geometry):
    return data if geometry is None else WindowedTensor(data, geometry)


# --------------------------------------------------------------------------
# cores


def pixel_window_attention(q, k, v, mask=None, window=None, divisor=None):
    """Windowed pixel attention ``V @ softmax(Q^T K / M + mask)^T``.

    ``divisor`` defaults to the window side ``M``; pass it explicitly when
    the windows are not square (global attention).
    """
    (q, k, v), geometry = _unwrap(q, k, v)
    n, c, area = q.shape
    if divisor is None:
        if window is None:
            window = int(round(np.sqrt(area)))
        if window * window != area:
            raise ConfigurationError(f"window {window} does not match window area {area}")
        divisor = window
    scores = np.matmul(q.transpose(0, 2, 1), k) / divisor
    record_matmul(n * area * area, c, "attn_pixel")
    if mask is not None:
        mask = np.asarray(mask, dtype=scores.dtype)
        if mask.shape != (n, area, area):
            raise ConfigurationError(f"mask shape {mask.shape} != {(n, area, area)}")
        scores = scores + mask
    attn = softmax_rows(scores)
    _observe("pixel", attn)
    out = np.matmul(v, attn.transpose(0, 2, 1))
    record_matmul(n * c * area, area, "attn_pixel")
    return _rewrap(out, geometry)


def channel_window_attention(q, k, v, tau):
    """Windowed channel attention ``softmax(Q K^T / tau) @ V``. Never masked."""
    (q, k, v), geometry = _unwrap(q, k, v)
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    n, c, area = q.shape
    scores = np.matmul(q, k.transpose(0, 2, 1)) / tau
    record_matmul(n * c * c, area, "attn_channel")
    attn = softmax_rows(scores)
    _observe("channel", attn)
    out = np.matmul(attn, v)
    record_matmul(n * c * area, c, "attn_channel")
    return _rewrap(out, geometry)


def cca_attention(q, k, v, heads: int):
    """Multi-head channel attention on (C, N) inputs, scaled by sqrt(C / heads)."""
    (q, k, v), _ = _unwrap(q, k, v)
    c, n = q.shape
    if heads < 1 or c % heads:
        raise ConfigurationError(f"{c} channels not divisible by {heads} heads")
    d = c // heads
    qh, kh, vh = (t.reshape(heads, d, n) for t in (q, k, v))
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) / math.sqrt(d)
    record_matmul(heads * d * d, n, "attn_cca")
    attn = softmax_rows(scores)
    _observe("cca", attn)
    out = np.matmul(attn, vh)
    record_matmul(heads * d * n, d, "attn_cca")
    return out.reshape(c, n)


# --------------------------------------------------------------------------
# analytic backward passes


def _softmax_backward(attn, d_attn):
    return attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))


def pixel_attention_backward(q, k, v, grad_out, mask=None, window=None, divisor=None):
    """Gradients of :func:`pixel_window_attention` w.r.t. Q, K and V."""
    (q, k, v, grad_out), _ = _unwrap(q, k, v, grad_out)
    n, c, area = q.shape
    if divisor is None:
        divisor = window if window is not None else np.sqrt(area)
    scores = np.matmul(q.transpose(0, 2, 1), k) / divisor
    if mask is not None:
        scores = scores + mask
    attn = softmax_rows(scores)
    d_v = np.matmul(grad_out, attn)
    d_attn = np.matmul(grad_out.transpose(0, 2, 1), v)
    d_scores = _softmax_backward(attn, d_attn) / divisor
    d_q = np.matmul(k, d_scores.transpose(0, 2, 1))
    d_k = np.matmul(q, d_scores)
    return {"q": d_q, "k": d_k, "v": d_v}


def channel_attention_backward(q, k, v, grad_out, tau):
    """Gradients of :func:`channel_window_attention`, including d/d tau."""
    (q, k, v, grad_out), _ = _unwrap(q, k, v, grad_out)
    logits = np.matmul(q, k.transpose(0, 2, 1))
    attn = softmax_rows(logits / tau)
    d_v = np.matmul(attn.transpose(0, 2, 1), grad_out)
    d_attn = np.matmul(grad_out, v.transpose(0, 2, 1))
    d_scores = _softmax_backward(attn, d_attn)
    d_q = np.matmul(d_scores, k) / tau
    d_k = np.matmul(d_scores.transpose(0, 2, 1), q) / tau
    d_tau = -float((d_scores * logits).sum()) / tau**2
    return {"q": d_q, "k": d_k, "v": d_v, "tau": d_tau}


def cca_attention_backward(q, k, v, grad_out, heads: int):
    c, n = q.shape
    d = c // heads
    shaped = [np.asarray(t).reshape(heads, d, n) for t in (q, k, v, grad_out)]
    grads = channel_attention_backward(*shaped, tau=np.sqrt(d))
    return {name: grads[name].reshape(c, n) for name in ("q", "k", "v")}


def attention_backward(kind: str, inputs: dict, grad_out):
    """Dispatch to the analytic backward pass of a pixel, channel or cca core."""
    if kind == "pixel":
        return pixel_attention_backward(
            inputs["q"], inputs["k"], inputs["v"], grad_out,
            mask=inputs.get("mask"), window=inputs.get("window"), divisor=inputs.get("divisor"),
        )
    if kind == "channel":
        return channel_attention_backward(inputs["q"], inputs["k"], inputs["v"], grad_out, inputs["tau"])
    if kind == "cca":
        return cca_attention_backward(inputs["q"], inputs["k"], inputs["v"], grad_out, inputs["heads"])
    raise ConfigurationError(f"unknown attention kind {kind!r}")


# --------------------------------------------------------------------------
# parameters


@dataclass
class QKVProjections:
    wq: ConvParams
    wk: ConvParams
    wv: ConvParams


@dataclass
class FfnParams:
    conv_in: ConvParams
    conv_mid: ConvParams
    conv_out: ConvParams


@dataclass
class SSSWATParams:
    mode: str
    norm1: LayerNormParams
    norm_spec: LayerNormParams
    freq: FreqProcessorParams
    stage1: QKVProjections
    stage2: QKVProjections
    norm2: LayerNormParams
    ffn: FfnParams
    tau1: np.ndarray | None = None
    tau2: np.ndarray | None = None


@dataclass
class LHDDATParams:
    pixel: SSSWATParams
    channel: SSSWATParams
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(()))


@dataclass
class CCATParams:
    norm1: LayerNormParams
    qkv: QKVProjections
    out_proj: ConvParams
    norm2: LayerNormParams
    ffn: FfnParams
    heads: int = 1


@dataclass
class PSATParams:
    norm1: LayerNormParams
    qkv: QKVProjections
    out_proj: ConvParams
    norm2: LayerNormParams
    ffn: FfnParams


@dataclass
class GDATParams:
    ccat: CCATParams
    psat: PSATParams
    beta: np.ndarray = field(default_factory=lambda: np.zeros(()))


def make_qkv(rng, c, dtype=np.float64) -> QKVProjections:
    return QKVProjections(*(make_conv(rng, c, c, bias=False, dtype=dtype) for _ in range(3)))


def make_ffn(rng, c, ratio: int = 2, dtype=np.float64) -> FfnParams:
    hidden = ratio * c
    return FfnParams(
        conv_in=make_conv(rng, c, hidden, dtype=dtype),
        conv_mid=make_conv(rng, hidden, hidden, k=3, padding=1, groups=hidden, dtype=dtype),
        conv_out=make_conv(rng, hidden, c, dtype=dtype),
    )


def make_ssswat(rng, c, mode: str, dtype=np.float64) -> SSSWATParams:
    if mode not in ("pixel", "channel"):
        raise ConfigurationError(f"mode must be 'pixel' or 'channel', got {mode!r}")
    tau = (lambda: np.zeros((), dtype=dtype)) if mode == "channel" else (lambda: None)
    return SSSWATParams(
        mode=mode,
        norm1=make_layer_norm(c, dtype),
        norm_spec=make_layer_norm(c, dtype),
        freq=make_freq_processor(rng, c, dtype=dtype),
        stage1=make_qkv(rng, c, dtype),
        stage2=make_qkv(rng, c, dtype),
        norm2=make_layer_norm(c, dtype),
        ffn=make_ffn(rng, c, dtype=dtype),
        tau1=tau(),
        tau2=tau(),
    )


def make_l_hd_dat(rng, c, dtype=np.float64) -> LHDDATParams:
    return LHDDATParams(
        pixel=make_ssswat(rng, c, "pixel", dtype),
        channel=make_ssswat(rng, c, "channel", dtype),
        alpha=np.zeros((), dtype=dtype),
    )


def make_ccat(rng, c, heads: int, dtype=np.float64) -> CCATParams:
    if c % heads:
        raise ConfigurationError(f"width {c} not divisible by {heads} heads")
    return CCATParams(
        norm1=make_layer_norm(c, dtype),
        qkv=make_qkv(rng, c, dtype),
        out_proj=make_conv(rng, c, c, dtype=dtype),
        norm2=make_layer_norm(c, dtype),
        ffn=make_ffn(rng, c, dtype=dtype),
        heads=heads,
    )


def make_psat(rng, c, dtype=np.float64) -> PSATParams:
    return PSATParams(
        norm1=make_layer_norm(c, dtype),
        qkv=make_qkv(rng, c, dtype),
        out_proj=make_conv(rng, c, c, dtype=dtype),
        norm2=make_layer_norm(c, dtype),
        ffn=make_ffn(rng, c, dtype=dtype),
    )


def make_g_dat(rng, c, heads: int, dtype=np.float64) -> GDATParams:
    return GDATParams(ccat=make_ccat(rng, c, heads, dtype), psat=make_psat(rng, c, dtype), beta=np.zeros((), dtype=dtype))


# --------------------------------------------------------------------------
# blocks


def ffn(x, p: FfnParams):
    x = gelu(conv2d(x, p.conv_in))
    x = gelu(conv2d(x, p.conv_mid))
    return conv2d(x, p.conv_out)


def tiled_window_attention(q, k, v, mode: str, window: int, tau: float = 1.0, mask=None, band: int = 1):
    """Windowed attention over padded (C, Hp, Wp) maps, ``band`` window rows at a time.

    Equivalent to partition -> core -> reverse on the whole map, but keeps the
    working set small so run time stays proportional to the pixel count.
    """
    (q, k, v), _ = _unwrap(q, k, v)
    c, hp, wp = q.shape
    if hp % window or wp % window:
        raise ConfigurationError(f"map {hp}x{wp} is not a multiple of window {window}")
    per_row = wp // window
    out = np.empty(v.shape, dtype=np.result_type(q, k, v))
    step = band * window
    for y0 in range(0, hp, step):
        y1 = min(hp, y0 + step)
        qw, kw, vw = (window_partition(t[:, y0:y1], window) for t in (q, k, v))
        if mode == "pixel":
            tile_mask = None
            if mask is not None:
                r0 = y0 // window
                tile_mask = mask[r0 * per_row : (y1 // window) * per_row]
            res = pixel_window_attention(qw, kw, vw, mask=tile_mask, window=window)
        elif mode == "channel":
            res = channel_window_attention(qw, kw, vw, tau)
        else:
            raise ConfigurationError(f"unknown attention mode {mode!r}")
        out[:, y0:y1] = window_reverse(res)
    return out


def _windowed_attention(mode, q, k, v, window, tau, mask=None):
    tau = temperature_value(tau) if mode == "channel" else 1.0
    return tiled_window_attention(q, k, v, mode, window, tau=tau, mask=mask)


def ssswat_attention(x, p: SSSWATParams, window: int, shift: int):
    """Two-stage spatial-spectral attention; returns the residual branch."""
    spatial = apply_layer_norm(x, p.norm1)
    spectral = apply_layer_norm(frequency_processor(x, p.freq), p.norm_spec)
    spatial, (h, w) = pad_to_multiple(spatial, window)
    spectral, _ = pad_to_multiple(spectral, window)
    hp, wp = spatial.shape[1:]

    q = conv2d(spectral, p.stage1.wq)
    k = conv2d(spectral, p.stage1.wk)
    v = conv2d(spatial, p.stage1.wv)
    mid = _windowed_attention(p.mode, q, k, v, window, p.tau1)

    shifted = cyclic_shift(mid, shift)
    q = conv2d(shifted, p.stage2.wq)
    k = conv2d(shifted, p.stage2.wk)
    v = conv2d(shifted, p.stage2.wv)
    mask = None
    if p.mode == "pixel" and shift > 0:
        mask = build_shift_mask(hp, wp, window, shift)
    out = inverse_cyclic_shift(_windowed_attention(p.mode, q, k, v, window, p.tau2, mask=mask), shift)
    return out[:, :h, :w]


def _block_check(x, norm: LayerNormParams):
    if x.ndim != 3 or x.shape[0] != norm.gamma.shape[0]:
        raise ConfigurationError(
            f"block width {norm.gamma.shape[0]} does not match input shape {x.shape}"
        )


def ssswat_block(x, p: SSSWATParams, window: int, shift: int):
    _block_check(x, p.norm1)
    if not 0 <= shift < window:
        raise ConfigurationError(f"shift {shift} must lie in [0, {window})")
    y = x + ssswat_attention(x, p, window, shift)
    return y + ffn(apply_layer_norm(y, p.norm2), p.ffn)


def l_hd_dat(x, p: LHDDATParams, window: int, shift: int):
    a = mix_value(p.alpha)
    return a * ssswat_block(x, p.pixel, window, shift) + (1.0 - a) * ssswat_block(x, p.channel, window, shift)


def _project(x, qkv: QKVProjections):
    c = x.shape[0]
    return tuple(conv2d(x, w).reshape(c, -1) for w in (qkv.wq, qkv.wk, qkv.wv))


def cca_multihead(x, qkv: QKVProjections, heads: int, out_proj: ConvParams):
    c, h, w = x.shape
    if heads < 1 or c % heads:
        raise ConfigurationError(f"{c} channels not divisible by {heads} heads")
    q, k, v = _project(x, qkv)
    return conv2d(cca_attention(q, k, v, heads).reshape(c, h, w), out_proj)


def ccat_block(x, p: CCATParams):
    _block_check(x, p.norm1)
    y = x + cca_multihead(apply_layer_norm(x, p.norm1), p.qkv, p.heads, p.out_proj)
    return y + ffn(apply_layer_norm(y, p.norm2), p.ffn)


def global_pixel_attention(q, k, v, height: int, width: int):
    """Pixel attention over one window spanning the whole (C, H*W) map.

    The logit divisor is the side of a square of equal area, sqrt(H*W).
    """
    out = pixel_window_attention(q[None], k[None], v[None], divisor=math.sqrt(height * width))
    return out[0]


def psat_attention(x, p: PSATParams):
    c, h, w = x.shape
    q, k, v = _project(x, p.qkv)
    return conv2d(global_pixel_attention(q, k, v, h, w).reshape(c, h, w), p.out_proj)


def psat_block(x, p: PSATParams):
    _block_check(x, p.norm1)
    y = x + psat_attention(apply_layer_norm(x, p.norm1), p)
    return y + ffn(apply_layer_norm(y, p.norm2), p.ffn)


def g_dat(x, p: GDATParams):
    b = mix_value(p.beta)
    return b * ccat_block(x, p.ccat) + (1.0 - b) * psat_block(x, p.psat)
