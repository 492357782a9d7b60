from __future__ import annotations

import threading


class SimClock:
    """Integer-millisecond simulated clock shared by a run's components."""

    def __init__(self, start_ms: int = 0) -> None:
        self._now = int(start_ms)
        self._lock = threading.Lock()

    @property
    def now_ms(self) -> int:
        return self._now

    def advance(self, delta_ms: int | float) -> int:
        if delta_ms < 0:
            raise ValueError("clock cannot move backwards")
        with self._lock:
            self._now += int(round(delta_ms))
            return self._now

    def advance_to(self, t_ms: int) -> int:
        with self._lock:
            self._now = max(self._now, int(t_ms))
            return self._now
