"""Numeric substrate: convolution, channel layer norm, softmax, GELU, 2-D FFT.

Feature maps are plain ``numpy`` arrays of shape (C, H, W). Verification code
runs in float64; every kernel preserves the dtype it is given so float32
inference also works.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ._counting import record_matmul
from .validation import ConfigurationError


@dataclass
class ConvParams:
    """Weights of a 2-D cross-correlation.

    ``weight`` has shape (out, in // groups, kh, kw).
    """

    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        out, _, _, _ = self.weight.shape
        if out % self.groups:
            raise ConfigurationError(f"out channels {out} not divisible by groups {self.groups}")
        if self.bias is not None and self.bias.shape != (out,):
            raise ConfigurationError(f"bias shape {self.bias.shape} != ({out},)")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel_size
        ho = (h + 2 * self.padding - kh) // self.stride + 1
        wo = (w + 2 * self.padding - kw) // self.stride + 1
        return ho, wo

    def param_count(self) -> int:
        n = self.weight.size
        return n + (self.bias.size if self.bias is not None else 0)


@dataclass
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray


def make_conv(rng, cin, cout, k=1, stride=1, padding=0, groups=1, bias=True, dtype=np.float64):
    """Fan-in scaled uniform init; ``rng=None`` gives an all-zero conv."""
    shape = (cout, cin // groups, k, k)
    fan_in = (cin // groups) * k * k
    bound = 1.0 / np.sqrt(fan_in)
    if rng is None:
        w = np.zeros(shape, dtype=dtype)
        b = np.zeros(cout, dtype=dtype) if bias else None
    else:
        w = rng.uniform(-bound, bound, size=shape).astype(dtype)
        b = rng.uniform(-bound, bound, size=cout).astype(dtype) if bias else None
    return ConvParams(w, b, stride=stride, padding=padding, groups=groups)


def make_layer_norm(channels, dtype=np.float64) -> LayerNormParams:
    return LayerNormParams(np.ones(channels, dtype=dtype), np.zeros(channels, dtype=dtype))


def identity_conv(channels, dtype=np.float64) -> ConvParams:
    w = np.eye(channels, dtype=dtype).reshape(channels, channels, 1, 1)
    return ConvParams(w, np.zeros(channels, dtype=dtype))


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Cross-correlate a (C, H, W) map; taps are accumulated in (ky, kx) order."""
    cin, h, w = x.shape
    if cin != p.in_channels:
        raise ConfigurationError(f"conv expects {p.in_channels} input channels, got {cin}")
    kh, kw = p.kernel_size
    ho, wo = p.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ConfigurationError(f"conv output would be empty for input {h}x{w}")
    s, g = p.stride, p.groups
    if p.padding:
        x = np.pad(x, ((0, 0), (p.padding, p.padding), (p.padding, p.padding)))
    cout = p.out_channels
    out = np.zeros((cout, ho, wo), dtype=np.result_type(x, p.weight))
    if g == 1:
        flat = out.reshape(cout, ho * wo)
        for ky in range(kh):
            for kx in range(kw):
                patch = x[:, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s]
                flat += p.weight[:, :, ky, kx] @ patch.reshape(cin, ho * wo)
    else:
        og, ig = cout // g, cin // g
        grouped = out.reshape(g, og, ho, wo)
        wg = p.weight.reshape(g, og, ig, kh, kw)
        for ky in range(kh):
            for kx in range(kw):
                patch = x[:, ky : ky + s * (ho - 1) + 1 : s, kx : kx + s * (wo - 1) + 1 : s]
                grouped += np.einsum("goi,gihw->gohw", wg[:, :, :, ky, kx], patch.reshape(g, ig, ho, wo))
    record_matmul(cout * ho * wo, (cin // g) * kh * kw, "conv")
    if p.bias is not None:
        out += p.bias[:, None, None]
    return out


def layer_norm_channel(x: np.ndarray, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Normalise over the channel axis independently at every pixel."""
    if x.shape[0] < 1:
        raise ConfigurationError("layer norm needs at least one channel")
    if len(gamma) != x.shape[0] or len(beta) != x.shape[0]:
        raise ConfigurationError("gamma/beta length must equal channel count")
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    xhat = xc / np.sqrt(var + eps)
    return xhat * gamma[:, None, None] + beta[:, None, None]


def layer_norm_channel_backward(x, gamma, grad_out, eps: float = 1e-5):
    """Gradients of :func:`layer_norm_channel` w.r.t. input, gamma, beta."""
    n = x.shape[0]
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d_gamma = (grad_out * xhat).sum(axis=(1, 2))
    d_beta = grad_out.sum(axis=(1, 2))
    g = grad_out * gamma[:, None, None]
    d_x = inv / n * (n * g - g.sum(axis=0, keepdims=True) - xhat * (g * xhat).sum(axis=0, keepdims=True))
    return d_x, d_gamma, d_beta


def apply_layer_norm(x, p: LayerNormParams, eps: float = 1e-5):
    return layer_norm_channel(x, p.gamma, p.beta, eps)


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def gelu(x):
    """Exact (erf-based) GELU."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def fft2d(x: np.ndarray) -> np.ndarray:
    """Unnormalised forward DFT over the two trailing axes."""
    return np.fft.fft2(x, axes=(-2, -1))


def ifft2d(x: np.ndarray) -> np.ndarray:
    """Inverse DFT over the two trailing axes, scaled by 1/(H*W)."""
    return np.fft.ifft2(x, axes=(-2, -1))


def finite_diff(f, x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        fp = f(x.copy())
        x[i] = orig - eps
        fm = f(x.copy())
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad
