"""Lightweight stage timing for the benchmark command."""

from __future__ import annotations

import time
from contextlib import contextmanager


class StageTimer:
    """Accumulates wall time per named stage."""

    def __init__(self):
        self.seconds: dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + (
                time.perf_counter() - t0)

    def total(self) -> float:
        return sum(self.seconds.values())


class _NullTimer:
    @contextmanager
    def stage(self, name: str):
        yield


null_timer = _NullTimer()
