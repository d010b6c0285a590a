"""Opt-in multiply-accumulate instrumentation.

Kernels call :func:`record_matmul` with the shape of every contraction they
perform. Nothing is recorded unless a :class:`MacCounter` is active on the
current thread, so timing runs pay a single attribute lookup per call.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

_state = threading.local()


@dataclass
class MacCounter:
    """Tallies contractions as multiply-accumulates and as raw mul+add ops.

    ``macs`` counts one unit per multiply-accumulate. ``flops`` counts an
    inner product of length ``n`` as ``n`` multiplies plus ``n - 1`` adds,
    which is how closed-form attention op counts are usually written.
    """

    macs: int = 0
    flops: int = 0
    by_tag: dict[str, int] = field(default_factory=dict)

    def add(self, outputs: int, inner: int, tag: str) -> None:
        macs = outputs * inner
        self.macs += macs
        self.flops += outputs * (2 * inner - 1)
        self.by_tag[tag] = self.by_tag.get(tag, 0) + macs


def active_counter() -> MacCounter | None:
    return getattr(_state, "counter", None)


def record_matmul(outputs: int, inner: int, tag: str) -> None:
    counter = getattr(_state, "counter", None)
    if counter is not None:
        counter.add(int(outputs), int(inner), tag)


@contextmanager
def count_macs():
    """Activate a fresh counter for the duration of the block.

    >>> with count_macs() as c:
    ...     record_matmul(4, 3, "demo")
    >>> c.macs, c.flops
    (12, 20)
    """
    previous = getattr(_state, "counter", None)
    counter = MacCounter()
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = previous
