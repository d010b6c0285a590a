"""scikit-learn compatible wrapper around the restoration network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .network import MIN_INPUT_SIZE, ModelConfig, build_model, count_macs, count_params, forward
from .quality import psnr, report_psnr
from .validation import check_image_batch


class HighlightRemover(TransformerMixin, BaseEstimator):
    """Image-to-image estimator: X is a batch of 3xHxW images in [0, 1].

    ``fit`` only materialises seeded weights; there is no training loop.
    Use :meth:`from_checkpoint` to wrap trained weights.

    Parameters
    ----------
    base_width : int
        Channel width of the full-resolution level.
    blocks_per_level : tuple of int
        Block counts for the two upper levels, the 1/4 level and the bottleneck.
    window, shift : int
        Attention window side and cyclic shift (``None`` means ``window // 2``).
    heads : int
        Heads of the channel-contextual attention.
    global_residual : bool
        Add the input image to the network output.
    seed : int
        Weight initialisation seed.
    clip : bool
        Clip predictions to [0, 1].
    """

    def __init__(
        self,
        base_width=16,
        blocks_per_level=(1, 1, 1, 1),
        window=8,
        shift=None,
        heads=2,
        global_residual=True,
        seed=0,
        clip=True,
    ):
        self.base_width = base_width
        self.blocks_per_level = blocks_per_level
        self.window = window
        self.shift = shift
        self.heads = heads
        self.global_residual = global_residual
        self.seed = seed
        self.clip = clip

    def _config(self) -> ModelConfig:
        return ModelConfig(
            base_width=self.base_width,
            blocks_per_level=tuple(self.blocks_per_level),
            window=self.window,
            shift=self.shift,
            heads=self.heads,
            global_residual=self.global_residual,
            seed=self.seed,
        )

    def fit(self, X=None, y=None):
        if X is not None:
            check_image_batch(X, min_size=MIN_INPUT_SIZE)
        self.model_ = build_model(self._config())
        self.n_params_ = count_params(self.model_)
        return self

    @classmethod
    def from_checkpoint(cls, path, clip=True) -> "HighlightRemover":
        model = load_checkpoint(path)
        cfg = model.config
        est = cls(
            base_width=cfg.base_width,
            blocks_per_level=cfg.blocks_per_level,
            window=cfg.window,
            shift=cfg.shift,
            heads=cfg.heads,
            global_residual=cfg.global_residual,
            seed=cfg.seed,
            clip=clip,
        )
        est.model_ = model
        est.n_params_ = count_params(model)
        return est

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(self.model_, path)

    def predict(self, X):
        check_is_fitted(self, "model_")
        images = check_image_batch(X, min_size=MIN_INPUT_SIZE)
        out = [forward(self.model_, im) for im in images]
        if self.clip:
            out = [np.clip(o, 0.0, 1.0) for o in out]
        if len({o.shape for o in out}) == 1:
            return np.stack(out)
        return out

    def transform(self, X):
        return self.predict(X)

    def score(self, X, y):
        """Mean PSNR (dB, capped) of predictions against ``y``."""
        preds = self.predict(X)
        targets = check_image_batch(y)
        return float(np.mean([report_psnr(psnr(p, t)) for p, t in zip(preds, targets)]))

    def macs(self, height: int, width: int) -> int:
        check_is_fitted(self, "model_")
        return count_macs(self.model_, height, width)
