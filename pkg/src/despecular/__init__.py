"""Dual-attention specular highlight removal network in NumPy."""

__version__ = "0.1.0"

from .network import ModelConfig, build_model, count_macs, count_params, forward  # noqa: E402
from .estimator import HighlightRemover  # noqa: E402

__all__ = [
    "HighlightRemover",
    "ModelConfig",
    "build_model",
    "count_macs",
    "count_params",
    "forward",
    "__version__",
]
