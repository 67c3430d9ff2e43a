"""Discrete-event clock with a deterministic tie-break."""

from __future__ import annotations

import heapq
from typing import Any, Iterator, Optional, Tuple


class SimClock:
    """Priority queue of timestamped items.

    Items scheduled at the same time pop in insertion order, so a caller
    that enqueues a day's commands in the intended sequence keeps that
    sequence without inventing sub-second timestamps.
    """

    def __init__(self, start: int = 0) -> None:
        self.time = int(start)
        self._heap: list[Tuple[int, int, Any]] = []
        self._seq = 0

    def schedule(self, at: int, item: Any) -> None:
        at = int(at)
        if at < self.time:
            raise ValueError(f"cannot schedule at {at}, clock already at {self.time}")
        heapq.heappush(self._heap, (at, self._seq, item))
        self._seq += 1

    def __bool__(self) -> bool:
        return bool(self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> Tuple[int, Any]:
        at, _, item = heapq.heappop(self._heap)
        self.time = at
        return at, item

    def drain(self) -> Iterator[Tuple[int, Any]]:
        while self._heap:
            yield self.pop()
