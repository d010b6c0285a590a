"""Analytic-vs-numeric gradient checks for the hand-written backward passes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    cca_attention,
    cca_attention_backward,
    channel_attention_backward,
    channel_window_attention,
    pixel_attention_backward,
    pixel_window_attention,
)
from .quality import GLOBAL_SSIM, LossWeights, composite_loss, composite_loss_grad, ssim_loss, ssim_loss_grad
from .tensor import finite_diff, layer_norm_channel, layer_norm_channel_backward
from .validation import ConfigurationError

THRESHOLD = 1e-4
EPS = 1e-5
BLOCKS = ("p_ssswa", "c_ssswa", "cca", "ln", "ssim", "composite")
ALIASES = {"pixel": "p_ssswa", "channel": "c_ssswa"}


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Max over entries of |a - n| / max(|a|, |n|, floor)."""
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    n = np.ravel(np.asarray(numeric, dtype=np.float64))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


@dataclass
class GradCheckReport:
    block: str
    seed: int
    params: list[dict] = field(default_factory=list)
    threshold: float = THRESHOLD

    @property
    def passed(self) -> bool:
        return all(p["max_rel_err"] < self.threshold for p in self.params)

    def add(self, name: str, analytic, numeric) -> None:
        self.params.append({"name": name, "max_rel_err": relative_error(analytic, numeric)})

    def to_dict(self) -> dict:
        return {"block": self.block, "seed": self.seed, "params": self.params, "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _numeric(fn, arrays: dict, name: str, eps: float):
    base = arrays[name]

    def f(flat):
        trial = dict(arrays)
        trial[name] = flat.reshape(base.shape)
        return fn(**trial)

    return finite_diff(f, base, eps).reshape(base.shape)


def _check_pixel(report, rng, eps):
    c, area = 2, 4
    arrays = {n: rng.standard_normal((1, c, area)) for n in "qkv"}
    upstream = rng.standard_normal((1, c, area))
    # two regions, as for a window straddling the wrap seam
    region = np.array([0, 0, 1, 1])
    mask = np.where(region[:, None] == region[None, :], 0.0, -100.0)[None]

    def loss(q, k, v):
        return float((pixel_window_attention(q, k, v, mask=mask, window=2) * upstream).sum())

    grads = pixel_attention_backward(arrays["q"], arrays["k"], arrays["v"], upstream, mask=mask, window=2)
    for n in "qkv":
        report.add(f"p_ssswa.{n}", grads[n], _numeric(loss, arrays, n, eps))


def _check_channel(report, rng, eps):
    c, area, tau = 3, 4, 1.7
    arrays = {n: rng.standard_normal((2, c, area)) for n in "qkv"}
    upstream = rng.standard_normal((2, c, area))

    def loss(q, k, v, t=tau):
        return float((channel_window_attention(q, k, v, t) * upstream).sum())

    grads = channel_attention_backward(arrays["q"], arrays["k"], arrays["v"], upstream, tau)
    for n in "qkv":
        report.add(f"c_ssswa.{n}", grads[n], _numeric(loss, arrays, n, eps))
    d_tau = finite_diff(lambda t: loss(**arrays, t=float(t[0])), [tau], eps)
    report.add("c_ssswa.tau", grads["tau"], d_tau)


def _check_cca(report, rng, eps):
    c, heads, n_pix = 4, 2, 9
    arrays = {n: rng.standard_normal((c, n_pix)) for n in "qkv"}
    upstream = rng.standard_normal((c, n_pix))

    def loss(q, k, v):
        return float((cca_attention(q, k, v, heads) * upstream).sum())

    grads = cca_attention_backward(arrays["q"], arrays["k"], arrays["v"], upstream, heads)
    for n in "qkv":
        report.add(f"cca.{n}", grads[n], _numeric(loss, arrays, n, eps))


def _check_ln(report, rng, eps):
    c = 4
    arrays = {
        "x": rng.standard_normal((c, 3, 3)),
        "gamma": rng.standard_normal(c),
        "beta": rng.standard_normal(c),
    }
    upstream = rng.standard_normal((c, 3, 3))

    def loss(x, gamma, beta):
        return float((layer_norm_channel(x, gamma, beta) * upstream).sum())

    d_x, d_gamma, d_beta = layer_norm_channel_backward(arrays["x"], arrays["gamma"], upstream)
    for n, g in (("x", d_x), ("gamma", d_gamma), ("beta", d_beta)):
        report.add(f"ln.{n}", g, _numeric(loss, arrays, n, eps))


def _image_pair(rng):
    g = rng.random((1, 8, 8))
    d = np.clip(g + 0.2 * rng.standard_normal(g.shape), 0.0, 1.0)
    return d, g


def _check_ssim(report, rng, eps):
    d, g = _image_pair(rng)
    numeric = finite_diff(lambda flat: ssim_loss(flat.reshape(d.shape), g, GLOBAL_SSIM), d, eps)
    report.add("ssim.d", ssim_loss_grad(d, g, GLOBAL_SSIM), numeric.reshape(d.shape))


def _check_composite(report, rng, eps):
    d, g = _image_pair(rng)
    w = LossWeights()
    numeric = finite_diff(lambda flat: composite_loss(flat.reshape(d.shape), g, w), d, eps)
    report.add("composite.d", composite_loss_grad(d, g, w), numeric.reshape(d.shape))


_CHECKS = {
    "p_ssswa": _check_pixel,
    "c_ssswa": _check_channel,
    "cca": _check_cca,
    "ln": _check_ln,
    "ssim": _check_ssim,
    "composite": _check_composite,
}


def grad_check(block: str = "all", seed: int = 0, eps: float = EPS) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    ``block`` is ``"all"`` or one of :data:`BLOCKS` (``pixel``/``channel`` are
    accepted as aliases).
    """
    block = ALIASES.get(block, block)
    if block != "all" and block not in _CHECKS:
        raise ConfigurationError(f"unknown block {block!r}; choose from all, {', '.join(BLOCKS)}")
    report = GradCheckReport(block, seed)
    names = BLOCKS if block == "all" else (block,)
    for name in names:
        # each check draws from its own stream so results do not depend on selection
        _CHECKS[name](report, np.random.default_rng([seed, BLOCKS.index(name)]), eps)
    return report
