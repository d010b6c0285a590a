"""Input validation helpers shared by the kernels, the network and the estimator."""

from __future__ import annotations

import numpy as np


class ConfigurationError(ValueError):
    """Raised when tensor geometry or hyperparameters are inconsistent."""


def check_feature_map(x, name: str = "input", dtype=None) -> np.ndarray:
    """Return ``x`` as a finite rank-3 (C, H, W) floating array."""
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ConfigurationError(f"{name} must have shape (C, H, W), got {arr.shape}")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} contains NaN or Inf")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"{what} differ in shape: {a.shape} vs {b.shape}")


def check_image(x, min_size: int = 1, name: str = "image") -> np.ndarray:
    """Validate a 3xHxW RGB image with spatial dims of at least ``min_size``."""
    arr = check_feature_map(x, name=name)
    if arr.shape[0] != 3:
        raise ConfigurationError(f"{name} must have 3 channels, got {arr.shape[0]}")
    if arr.shape[1] < min_size or arr.shape[2] < min_size:
        raise ConfigurationError(
            f"{name} is {arr.shape[1]}x{arr.shape[2]}; minimum spatial size is "
            f"{min_size}x{min_size}"
        )
    return arr


def check_image_batch(X, min_size: int = 1) -> list[np.ndarray]:
    """Accept an (N, 3, H, W) array or a sequence of 3xHxW images."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        items = list(X)
    elif isinstance(X, np.ndarray) and X.ndim == 3:
        raise ConfigurationError("expected a batch of images; wrap a single image in a list")
    else:
        items = list(X)
    if not items:
        raise ConfigurationError("empty image batch")
    return [check_image(im, min_size=min_size, name=f"image[{i}]") for i, im in enumerate(items)]
