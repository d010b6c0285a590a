"""Window partitioning, cyclic shifts and the shifted-window attention mask."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .validation import ConfigurationError

MASK_VALUE = -100.0


@dataclass(frozen=True)
class WindowGeometry:
    height: int
    width: int
    padded_height: int
    padded_width: int
    window: int

    @property
    def grid(self) -> tuple[int, int]:
        return self.padded_height // self.window, self.padded_width // self.window

    @property
    def n_windows(self) -> int:
        gh, gw = self.grid
        return gh * gw


@dataclass
class WindowedTensor:
    """Array of shape (n_windows, C, M*M) plus the geometry it came from."""

    data: np.ndarray
    geometry: WindowGeometry

    @property
    def n_windows(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def window_area(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "WindowedTensor":
        return WindowedTensor(data, self.geometry)


def _ceil_to(n: int, m: int) -> int:
    return -(-n // m) * m


def pad_to_multiple(x: np.ndarray, window: int):
    """Zero-pad the bottom and right edges up to multiples of ``window``.

    Returns the padded map and the original (H, W).
    """
    if window < 1:
        raise ConfigurationError(f"window size must be >= 1, got {window}")
    _, h, w = x.shape
    hp, wp = _ceil_to(h, window), _ceil_to(w, window)
    if (hp, wp) == (h, w):
        return x, (h, w)
    return np.pad(x, ((0, 0), (0, hp - h), (0, wp - w))), (h, w)


def window_partition(x: np.ndarray, window: int, original_size=None) -> WindowedTensor:
    c, hp, wp = x.shape
    if hp % window or wp % window:
        raise ConfigurationError(
            f"map of size {hp}x{wp} is not a multiple of window {window}; pad first"
        )
    h, w = original_size if original_size is not None else (hp, wp)
    gh, gw = hp // window, wp // window
    # (c, gh, M, gw, M) -> (gh, gw, c, M, M)
    data = x.reshape(c, gh, window, gw, window).transpose(1, 3, 0, 2, 4)
    data = data.reshape(gh * gw, c, window * window)
    return WindowedTensor(np.ascontiguousarray(data), WindowGeometry(h, w, hp, wp, window))


def window_reverse(wt: WindowedTensor, crop: bool = True) -> np.ndarray:
    g = wt.geometry
    gh, gw = g.grid
    m = g.window
    n, c, area = wt.data.shape
    if n != gh * gw or area != m * m:
        raise ConfigurationError(
            f"windowed tensor {wt.data.shape} inconsistent with geometry {g}"
        )
    x = wt.data.reshape(gh, gw, c, m, m).transpose(2, 0, 3, 1, 4).reshape(c, g.padded_height, g.padded_width)
    if crop:
        x = x[:, : g.height, : g.width]
    return np.ascontiguousarray(x)


def cyclic_shift(x: np.ndarray, shift: int) -> np.ndarray:
    """Roll up-left: ``out[c, y, x] = in[c, (y+s) % H, (x+s) % W]``."""
    _, h, w = x.shape
    if not 0 <= shift < min(h, w):
        raise ConfigurationError(f"shift {shift} outside [0, {min(h, w)})")
    if shift == 0:
        return x
    return np.roll(x, (-shift, -shift), axis=(1, 2))


def inverse_cyclic_shift(x: np.ndarray, shift: int) -> np.ndarray:
    _, h, w = x.shape
    if not 0 <= shift < min(h, w):
        raise ConfigurationError(f"shift {shift} outside [0, {min(h, w)})")
    if shift == 0:
        return x
    return np.roll(x, (shift, shift), axis=(1, 2))


def _region_labels(n: int, window: int, shift: int) -> np.ndarray:
    labels = np.full(n, 2, dtype=np.int64)
    labels[: n - window] = 0
    labels[n - window : n - shift] = 1
    return labels


@lru_cache(maxsize=64)
def _shift_mask_cached(hp: int, wp: int, window: int, shift: int) -> np.ndarray:
    ry = _region_labels(hp, window, shift)
    rx = _region_labels(wp, window, shift)
    region = (3 * ry[:, None] + rx[None, :]).astype(np.float64)[None]
    windows = window_partition(region, window).data[:, 0, :]  # (nW, M*M)
    mask = np.where(windows[:, :, None] == windows[:, None, :], 0.0, MASK_VALUE)
    mask.setflags(write=False)
    return mask


def build_shift_mask(hp: int, wp: int, window: int, shift: int) -> np.ndarray:
    """Additive attention logits (nW, M*M, M*M) with entries in {0, -100}.

    Two positions of a shifted window may attend to each other only when they
    carry the same region label, i.e. neither was brought next to the other by
    the wrap-around of the cyclic shift. The returned array is read-only and
    shared between callers.
    """
    if hp % window or wp % window:
        raise ConfigurationError(f"padded size {hp}x{wp} is not a multiple of {window}")
    if not 0 <= shift < window:
        raise ConfigurationError(f"shift {shift} must lie in [0, {window})")
    return _shift_mask_cached(hp, wp, window, shift)
