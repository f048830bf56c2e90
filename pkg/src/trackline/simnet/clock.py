"""Discrete-event virtual clock."""
from __future__ import annotations

import heapq
import itertools
import logging
from typing import Callable

logger = logging.getLogger(__name__)


class VirtualClock:
    """Event queue ordered by ``(time, sequence)``.

    Time only moves forward, and only when :meth:`advance` or
    :meth:`run_until` is called.  Events scheduled for the same instant fire
    in the order they were scheduled.
    """

    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self.fired = 0

    def schedule(self, at: float, callback: Callable[[], None]) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} before now={self.now}")
        heapq.heappush(self._queue, (at, next(self._seq), callback))

    def call_later(self, delay: float, callback: Callable[[], None]) -> None:
        self.schedule(self.now + delay, callback)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def next_event_time(self) -> float | None:
        return self._queue[0][0] if self._queue else None

    def _fire_next(self) -> None:
        at, _, callback = heapq.heappop(self._queue)
        self.now = at
        self.fired += 1
        callback()

    def advance(self, until: float) -> int:
        """Fire every event due at or before ``until``; return how many fired."""
        if until < self.now:
            raise ValueError(f"cannot move clock back from {self.now} to {until}")
        count = 0
        while self._queue and self._queue[0][0] <= until:
            self._fire_next()
            count += 1
        self.now = until
        return count

    def run_until(self, predicate: Callable[[], bool], deadline: float | None = None) -> bool:
        """Fire events one at a time until ``predicate()`` holds.

        Stops at ``deadline`` (the clock is then left exactly there).  Returns
        the final value of the predicate.  With no deadline and an empty
        queue, returns immediately.
        """
        while not predicate():
            nxt = self.next_event_time()
            if nxt is None or (deadline is not None and nxt > deadline):
                if deadline is not None and deadline > self.now:
                    self.now = deadline
                return predicate()
            self._fire_next()
        return True

    def sleep(self, duration: float) -> None:
        """Let ``duration`` seconds of virtual time pass, firing due events."""
        self.advance(self.now + duration)
