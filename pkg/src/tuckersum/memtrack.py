"""Counters for dense core allocations made by the summation routines.

Only core-shaped arrays are recorded (sketched cores, projected cores, densified
cores); factor matrices and Gram matrices are not. Recording is a no-op unless a
:func:`track_core_allocations` context is active.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


@dataclass
class CoreAllocations:
    peak: int = 0
    events: list[tuple[str, int]] = field(default_factory=list)

    def peak_for(self, prefix: str) -> int:
        return max((n for label, n in self.events if label.startswith(prefix)), default=0)


_active: contextvars.ContextVar[tuple[CoreAllocations, ...]] = contextvars.ContextVar("_active", default=())


def record(label: str, shape: Sequence[int]) -> None:
    trackers = _active.get()
    if not trackers:
        return
    n = int(np.prod(shape, dtype=np.int64))
    for t in trackers:
        t.events.append((label, n))
        t.peak = max(t.peak, n)


@contextlib.contextmanager
def track_core_allocations() -> Iterator[CoreAllocations]:
    tracker = CoreAllocations()
    token = _active.set(_active.get() + (tracker,))
    try:
        yield tracker
    finally:
        _active.reset(token)
