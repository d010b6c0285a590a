"""Frequency-domain feature branch used to produce spectral queries and keys."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ConvParams, conv2d, fft2d, gelu, identity_conv, ifft2d, make_conv
from .validation import ConfigurationError


@dataclass
class FreqProcessorParams:
    conv_id1: ConvParams
    conv_id2: ConvParams
    conv_freq: ConvParams
    mlp: list[ConvParams] = field(default_factory=list)
    toning: ConvParams | None = None

    @property
    def channels(self) -> int:
        return self.conv_freq.in_channels


def make_freq_processor(rng, channels: int, mlp_depth: int = 2, dtype=np.float64) -> FreqProcessorParams:
    c = channels
    return FreqProcessorParams(
        conv_id1=make_conv(rng, c, c, dtype=dtype),
        conv_id2=make_conv(rng, c, c, dtype=dtype),
        conv_freq=make_conv(rng, c, c, dtype=dtype),
        mlp=[make_conv(rng, c, c, dtype=dtype) for _ in range(mlp_depth)],
        toning=make_conv(rng, 2 * c, c, dtype=dtype),
    )


def selector_toning(channels: int, dtype=np.float64) -> ConvParams:
    """A 2C -> C toning conv that passes through the first C channels."""
    w = np.zeros((channels, 2 * channels, 1, 1), dtype=dtype)
    w[np.arange(channels), np.arange(channels), 0, 0] = 1.0
    return ConvParams(w, np.zeros(channels, dtype=dtype))


def debug_freq_processor(channels: int, dtype=np.float64) -> FreqProcessorParams:
    """Identity-configured parameters for checking the spectral path in isolation."""
    c = channels
    return FreqProcessorParams(
        conv_id1=identity_conv(c, dtype),
        conv_id2=identity_conv(c, dtype),
        conv_freq=identity_conv(c, dtype),
        mlp=[identity_conv(c, dtype), identity_conv(c, dtype)],
        toning=selector_toning(c, dtype),
    )


def _mlp(x, layers):
    for i, layer in enumerate(layers):
        x = conv2d(x, layer)
        if i < len(layers) - 1:
            x = gelu(x)
    return x


def frequency_processor(
    x: np.ndarray,
    p: FreqProcessorParams,
    bypass_activation: bool = False,
    bypass_mlp: bool = False,
) -> np.ndarray:
    """Spectral features of a (C, H, W) map; output has the input's shape.

    The two ``bypass_*`` switches drop the GELU after the frequency conv and
    the MLP stack respectively. They exist for debugging and verification.
    """
    if x.shape[0] != p.channels:
        raise ConfigurationError(
            f"frequency processor built for {p.channels} channels, got {x.shape[0]}"
        )
    identity1 = conv2d(x, p.conv_id1)
    identity2 = conv2d(x, p.conv_id2)
    spec = fft2d(x).real
    spec = conv2d(spec, p.conv_freq)
    if not bypass_activation:
        spec = gelu(spec)
    if not bypass_mlp:
        spec = _mlp(spec, p.mlp)
    out = ifft2d(spec).real.astype(x.dtype, copy=False) + identity2
    return conv2d(np.concatenate([out, identity1], axis=0), p.toning)
