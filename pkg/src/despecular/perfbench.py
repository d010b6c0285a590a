"""Complexity checks for the attention kernels.

Closed-form operation counts count every multiply and every add, so an
inner product of length n costs 2n - 1 ops. The instrumented counter records
multiply-accumulates; one MAC is one multiply plus one add, so reports
compare ``2 * MACs`` against the closed form (factor ``OPS_PER_MAC``).
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ._counting import count_macs, record_matmul
from .attention import tiled_window_attention
from .tensor import softmax_rows
from .validation import ConfigurationError

KINDS = ("pixel", "channel", "dense")
OPS_PER_MAC = 2
RECONCILIATION_NOTE = (
    "theoretical_ops counts multiplies and adds separately; "
    f"instrumented MACs are converted with ops = {OPS_PER_MAC} * MACs"
)


def theoretical_op_terms(kind: str, channels: int, height: int, width: int, window: int | None = None) -> dict:
    """Closed-form op counts split into the score term and the aggregation term."""
    c, n = channels, height * width
    if kind == "pixel":
        if window is None:
            raise ConfigurationError("pixel op count needs a window size")
        a = window * window
        return {"scores": n * a * (2 * c - 1), "aggregate": n * c * (2 * a - 1)}
    if kind == "channel":
        return {"scores": 2 * c * c * n, "aggregate": 2 * c * c * n}
    if kind == "dense":
        return {"scores": n * n * (2 * c - 1), "aggregate": n * c * (2 * n - 1)}
    raise ConfigurationError(f"unknown kernel kind {kind!r}")


def theoretical_ops(kind: str, channels: int, height: int, width: int, window: int | None = None) -> int:
    """Pixel: (HW)M^2(2C-1) + (HW)C(2M^2-1). Channel: 4C^2(HW). Dense: pixel with M^2 -> HW."""
    return int(sum(theoretical_op_terms(kind, channels, height, width, window).values()))


def dense_attention(q, k, v, chunk: int = 1024):
    """Full-image pixel attention on (C, N) maps, processed in query chunks."""
    c, n = q.shape
    out = np.empty_like(v)
    divisor = np.sqrt(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        scores = q[:, start:stop].T @ k / divisor
        record_matmul((stop - start) * n, c, "attn_dense")
        attn = softmax_rows(scores)
        out[:, start:stop] = v @ attn.T
        record_matmul(c * (stop - start), n, "attn_dense")
    return out


def make_kernel(kind: str, channels: int, side: int, window: int, seed: int = 0):
    """Return a zero-argument callable running one attention pass at ``side`` x ``side``."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown kernel kind {kind!r}")
    if kind != "dense" and side % window:
        raise ConfigurationError(f"size {side} is not a multiple of window {window}")
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((channels, side, side)) for _ in range(3))
    if kind == "dense":
        qf, kf, vf = (t.reshape(channels, -1) for t in (q, k, v))
        return lambda: dense_attention(qf, kf, vf)

    return lambda: tiled_window_attention(q, k, v, kind, window)


@dataclass
class SizeResult:
    height: int
    width: int
    median_seconds: float
    mean_seconds: float
    repetitions: int
    calls_per_sample: int
    instrumented_macs: int
    instrumented_ops: int
    theoretical_ops: int
    relative_op_error: float


@dataclass
class ScalingReport:
    kind: str
    channels: int
    window: int
    results: list[SizeResult] = field(default_factory=list)
    exponent: float = float("nan")
    exponent_band: tuple = (0.0, 0.0)
    exponent_ok: bool = False
    ops_ok: bool = False
    note: str = RECONCILIATION_NOTE

    @property
    def passed(self) -> bool:
        return self.exponent_ok and self.ops_ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exponent_band"] = list(self.exponent_band)
        d["pass"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        lines = [
            f"# kernel={self.kind} C={self.channels} M={self.window}",
            f"# {self.note}",
            f"{'size':>11} {'median_s':>12} {'reps':>5} {'MACs':>14} {'ops(2*MAC)':>14} {'theory':>14} {'rel_err':>9}",
        ]
        for r in self.results:
            lines.append(
                f"{r.height:>5}x{r.width:<5} {r.median_seconds:>12.6f} {r.repetitions:>5} "
                f"{r.instrumented_macs:>14} {r.instrumented_ops:>14} {r.theoretical_ops:>14} "
                f"{r.relative_op_error:>9.4%}"
            )
        lo, hi = self.exponent_band
        lines.append(
            f"fitted exponent p={self.exponent:.3f} (band [{lo}, {hi}]) "
            f"exponent={'PASS' if self.exponent_ok else 'FAIL'} ops={'PASS' if self.ops_ok else 'FAIL'}"
        )
        return "\n".join(lines)


DEFAULT_BANDS = {"pixel": (0.85, 1.25), "channel": (0.85, 1.25), "dense": (1.7, 2.3)}


def fit_exponent(pixel_counts, times) -> float:
    """Least-squares slope of log(time) against log(pixel count)."""
    slope, _ = np.polyfit(np.log(np.asarray(pixel_counts, float)), np.log(np.asarray(times, float)), 1)
    return float(slope)


def _time_kernel(fn, reps: int, min_sample: float):
    fn()  # warmup, discarded
    calls = 1
    while True:
        start = time.perf_counter()
        for _ in range(calls):
            fn()
        elapsed = time.perf_counter() - start
        if elapsed >= min_sample or calls >= 1 << 16:
            break
        calls *= 2
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        for _ in range(calls):
            fn()
        samples.append((time.perf_counter() - start) / calls)
    return samples, calls


def run_scaling(
    kind: str,
    channels: int,
    window: int,
    sizes,
    reps: int = 5,
    op_tolerance: float = 0.02,
    band=None,
    min_sample: float = 0.02,
) -> ScalingReport:
    """Time one kernel at square sizes and fit time ~ (H*W)^p.

    Sub-resolution kernels are batched into repeated calls per sample until a
    sample lasts at least ``min_sample`` seconds.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3 or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigurationError("need at least three strictly increasing sizes")
    if reps < 5:
        raise ConfigurationError("need at least five timed repetitions")
    report = ScalingReport(kind, channels, window, exponent_band=tuple(band or DEFAULT_BANDS[kind]))
    for side in sizes:
        fn = make_kernel(kind, channels, side, window)
        with count_macs() as counter:
            fn()
        samples, calls = _time_kernel(fn, reps, min_sample)
        theory = theoretical_ops(kind, channels, side, side, window)
        ops = OPS_PER_MAC * counter.macs
        report.results.append(
            SizeResult(
                height=side,
                width=side,
                median_seconds=statistics.median(samples),
                mean_seconds=statistics.fmean(samples),
                repetitions=reps,
                calls_per_sample=calls,
                instrumented_macs=counter.macs,
                instrumented_ops=ops,
                theoretical_ops=theory,
                relative_op_error=abs(ops - theory) / theory,
            )
        )
    report.exponent = fit_exponent([r.height * r.width for r in report.results], [r.median_seconds for r in report.results])
    lo, hi = report.exponent_band
    report.exponent_ok = bool(lo <= report.exponent <= hi)
    report.ops_ok = all(r.relative_op_error <= op_tolerance for r in report.results)
    return report
