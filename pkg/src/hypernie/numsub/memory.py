"""Allocation accounting.

Two complementary counters:

* :func:`measure_peak` wraps ``tracemalloc`` (numpy reports its data buffers
  to it) and returns the peak number of bytes allocated above the baseline
  while a callable runs.
* :func:`note_alloc` lets kernels tag the score buffers they create, so tests
  can assert on *which* buffers exist and how large they are.
"""

from __future__ import annotations

import tracemalloc
from collections import defaultdict
from contextlib import contextmanager

_active = []


class AllocLog:
    def __init__(self):
        self.events = []
        self.by_tag = defaultdict(list)

    def add(self, tag, arr):
        entry = (tag, tuple(arr.shape), int(arr.nbytes))
        self.events.append(entry)
        self.by_tag[tag].append(entry)

    def count(self, tag) -> int:
        return len(self.by_tag[tag])

    def largest(self, tag=None) -> int:
        sizes = [n for t, _, n in self.events if tag is None or t == tag]
        return max(sizes, default=0)


def note_alloc(tag: str, arr) -> None:
    for log in _active:
        log.add(tag, arr)


@contextmanager
def alloc_log():
    log = AllocLog()
    _active.append(log)
    try:
        yield log
    finally:
        _active.remove(log)


def measure_peak(fn, *args, **kwargs):
    """Run ``fn`` and return ``(result, peak_bytes_above_baseline)``."""
    started = not tracemalloc.is_tracing()
    if started:
        tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        base, _ = tracemalloc.get_traced_memory()
        result = fn(*args, **kwargs)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if started:
            tracemalloc.stop()
    return result, peak - base
