"""Image quality metrics and the training objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .validation import ConfigurationError, check_same_shape

PSNR_REPORT_CAP = 99.0


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    mode: str = "windowed"
    window: int = 11
    sigma: float = 1.5

    def __post_init__(self):
        if self.mode not in ("global", "windowed"):
            raise ConfigurationError(f"unknown SSIM mode {self.mode!r}")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigurationError("SSIM stabilisers must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


GLOBAL_SSIM = SsimParams(mode="global")
WINDOWED_SSIM = SsimParams(mode="windowed")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the pixel-fidelity (MSE) and structural (1 - SSIM) terms."""

    fidelity: float = 1.0
    structural: float = 0.4

    def __post_init__(self):
        if self.fidelity < 0 or self.structural < 0:
            raise ConfigurationError("loss weights must be non-negative")


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, max_value: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    if max_value <= 0:
        raise ConfigurationError("max_value must be positive")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value**2 / err)


def report_psnr(value: float) -> float:
    """PSNR as written to reports, where infinity is capped."""
    return min(value, PSNR_REPORT_CAP)


def _global_terms(a, b, p: SsimParams):
    n = a.shape[1] * a.shape[2]
    mu_a = a.mean(axis=(1, 2))
    mu_b = b.mean(axis=(1, 2))
    da = a - mu_a[:, None, None]
    db = b - mu_b[:, None, None]
    var_a = (da * da).sum(axis=(1, 2)) / n
    var_b = (db * db).sum(axis=(1, 2)) / n
    cov = (da * db).sum(axis=(1, 2)) / n
    a1 = 2 * mu_a * mu_b + p.c1
    a2 = 2 * cov + p.c2
    b1 = mu_a**2 + mu_b**2 + p.c1
    b2 = var_a + var_b + p.c2
    return dict(n=n, mu_a=mu_a, mu_b=mu_b, da=da, db=db, a1=a1, a2=a2, b1=b1, b2=b2)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def effective_window(p: SsimParams, h: int, w: int) -> int:
    """Largest odd window no bigger than the configured one or the image."""
    size = min(p.window, h, w)
    return size if size % 2 else size - 1


def _filter_valid(x, g):
    size = g.size
    half = size // 2
    y = correlate1d(x, g, axis=-2, mode="constant")
    y = correlate1d(y, g, axis=-1, mode="constant")
    h, w = x.shape[-2:]
    return y[..., half : h - half, half : w - half]


def ssim_map(a, b, p: SsimParams = WINDOWED_SSIM) -> np.ndarray:
    """Local SSIM over every fully contained Gaussian window, per channel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    size = effective_window(p, *a.shape[1:])
    if size < 1:
        raise ConfigurationError("image too small for windowed SSIM")
    g = gaussian_window(size, p.sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + p.c1) * (2 * cov + p.c2)
    den = (mu_a**2 + mu_b**2 + p.c1) * (var_a + var_b + p.c2)
    return num / den


def ssim(a, b, p: SsimParams = WINDOWED_SSIM) -> float:
    """Mean SSIM. Global mode uses image-wide statistics per channel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    if a.ndim != 3:
        raise ConfigurationError("ssim expects (C, H, W) maps")
    if p.mode == "global":
        t = _global_terms(a, b, p)
        return float(np.mean(t["a1"] * t["a2"] / (t["b1"] * t["b2"])))
    return float(ssim_map(a, b, p).mean())


def ssim_loss(d, g, p: SsimParams = GLOBAL_SSIM) -> float:
    return 1.0 - ssim(d, g, p)


def ssim_loss_grad(d, g, p: SsimParams = GLOBAL_SSIM) -> np.ndarray:
    """Gradient of ``1 - ssim(d, g)`` w.r.t. ``d`` (global mode only)."""
    if p.mode != "global":
        raise ConfigurationError("analytic SSIM gradient is implemented for global mode")
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    check_same_shape(d, g)
    t = _global_terms(d, g, p)
    n = t["n"]
    a1, a2, b1, b2 = (t[k][:, None, None] for k in ("a1", "a2", "b1", "b2"))
    mu_d, mu_g = t["mu_a"][:, None, None], t["mu_b"][:, None, None]
    s = a1 * a2 / (b1 * b2)
    d_a1 = 2 * mu_g / n
    d_a2 = 2 * t["db"] / n
    d_b1 = 2 * mu_d / n
    d_b2 = 2 * t["da"] / n
    d_s = (d_a1 * a2 + a1 * d_a2) / (b1 * b2) - s * (d_b1 / b1 + d_b2 / b2)
    return -d_s / d.shape[0]


def composite_loss(d, g, w: LossWeights = LossWeights(), p: SsimParams = GLOBAL_SSIM) -> float:
    """Weighted sum of MSE and structural loss."""
    value = w.fidelity * mse(d, g)
    if w.structural:
        value += w.structural * ssim_loss(d, g, p)
    return value


def composite_loss_grad(d, g, w: LossWeights = LossWeights(), p: SsimParams = GLOBAL_SSIM) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    grad = w.fidelity * 2.0 * (d - g) / d.size
    if w.structural:
        grad = grad + w.structural * ssim_loss_grad(d, g, p)
    return grad
