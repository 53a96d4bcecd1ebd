"""Max-priority queue keyed by state with lazy invalidation."""

from __future__ import annotations

import heapq
from itertools import count
from typing import Dict, List, Optional, Tuple


class PriorityQueue:
    """Each state appears at most once, with its latest priority.

    Updating a priority pushes a fresh heap entry and leaves the old one in
    place; stale entries are skipped when they surface. Equal priorities pop
    in insertion order.
    """

    __slots__ = ("_heap", "_live", "_counter")

    def __init__(self):
        self._heap: List[Tuple[float, int, int]] = []
        self._live: Dict[int, Tuple[float, int]] = {}
        self._counter = count()

    def __len__(self) -> int:
        return len(self._live)

    def __contains__(self, state: int) -> bool:
        return state in self._live

    def __bool__(self) -> bool:
        return bool(self._live)

    def push(self, state: int, priority: float) -> None:
        tick = next(self._counter)
        self._live[state] = (priority, tick)
        heapq.heappush(self._heap, (-priority, tick, state))
        if len(self._heap) > 4 * len(self._live) + 64:
            self._compact()

    def discard(self, state: int) -> None:
        self._live.pop(state, None)

    def priority(self, state: int) -> Optional[float]:
        entry = self._live.get(state)
        return None if entry is None else entry[0]

    def pop(self) -> Tuple[int, float]:
        heap, live = self._heap, self._live
        while heap:
            negp, tick, state = heapq.heappop(heap)
            entry = live.get(state)
            if entry is not None and entry[1] == tick:
                del live[state]
                return state, -negp
        raise IndexError("pop from empty priority queue")

    def _compact(self) -> None:
        self._heap = [(-p, tick, s) for s, (p, tick) in self._live.items()]
        heapq.heapify(self._heap)
