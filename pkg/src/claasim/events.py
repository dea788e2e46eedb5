"""Deterministic discrete-event core.

Events execute in (time, insertion sequence) order; ties break FIFO so runs
are reproducible. All timestamps are quantized to 1 microsecond at scheduling
time, which keeps timer comparisons exact across platforms.
"""

from __future__ import annotations

import heapq
from typing import Callable

US = 1_000_000


class TimerHandle:
    __slots__ = ("time_us", "fn", "cancelled")

    def __init__(self, time_us: int, fn: Callable[[], None]) -> None:
        self.time_us = time_us
        self.fn = fn
        self.cancelled = False

    @property
    def time(self) -> float:
        return self.time_us / US

    def cancel(self) -> None:
        self.cancelled = True


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[tuple[int, int, TimerHandle]] = []
        self._seq = 0
        self._now_us = 0

    @property
    def now(self) -> float:
        return self._now_us / US

    def schedule(self, time: float, fn: Callable[[], None]) -> TimerHandle:
        """Schedule fn at `time` seconds; times in the past run "now"."""
        time_us = max(round(time * US), self._now_us)
        handle = TimerHandle(time_us, fn)
        heapq.heappush(self._heap, (time_us, self._seq, handle))
        self._seq += 1
        return handle

    def schedule_in(self, delay: float, fn: Callable[[], None]) -> TimerHandle:
        return self.schedule(self.now + delay, fn)

    def run_until(self, t_end: float) -> int:
        """Run events with time <= t_end; returns the number executed."""
        end_us = round(t_end * US)
        executed = 0
        while self._heap and self._heap[0][0] <= end_us:
            time_us, _seq, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now_us = time_us
            handle.fn()
            executed += 1
        self._now_us = max(self._now_us, end_us)
        return executed

    def run_all(self) -> int:
        executed = 0
        while self._heap:
            time_us, _seq, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now_us = time_us
            handle.fn()
            executed += 1
        return executed
