"""Process-wide operation counters.

Used to make structural claims checkable: e.g. that cached inference never
calls the matrix exponential, or that isometric layers skip row
normalization.
"""
from __future__ import annotations

import threading
from collections import Counter
from contextlib import contextmanager

_lock = threading.Lock()
_counts: Counter = Counter()


def bump(name: str, n: int = 1) -> None:
    with _lock:
        _counts[name] += n


def get(name: str) -> int:
    return _counts[name]


def reset() -> None:
    with _lock:
        _counts.clear()


@contextmanager
def counting():
    """Yield a Counter holding only the operations performed inside the block."""
    with _lock:
        before = Counter(_counts)
    delta: Counter = Counter()
    try:
        yield delta
    finally:
        with _lock:
            delta.update({k: v - before.get(k, 0) for k, v in _counts.items()})
            for k in [k for k, v in delta.items() if v == 0]:
                del delta[k]
