"""Prioritized sweeping with small backups over a mutable transition table.

``Sweeper`` is the synchronous core: callers apply adds and deletes directly
and pump sweeps themselves. ``SweeperService`` runs the same core on a
background thread behind three channels (add, delete, query), draining the
transition queues before it resumes sweeping.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from typing import IO, Dict, List, Optional, Sequence, Tuple

from .pqueue import PriorityQueue
from .qlookup import QEstimate, q_estimate
from .tabular_model import TransitionRecord, TransitionTable

logger = logging.getLogger(__name__)


@dataclass
class SweeperConfig:
    gamma: float = 0.99
    p_min: float = 5e-5

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.p_min < 0.0:
            raise ValueError(f"p_min must be non-negative, got {self.p_min}")


@dataclass
class SweepTables:
    """Q, V and U; absent keys read as 0.

    ``Q`` is nested ``state -> {action: value}`` and only holds observed
    pairs, so ``V(s)`` is the max over ``Q[s]``.
    """

    Q: Dict[int, Dict[int, float]] = field(default_factory=dict)
    V: Dict[int, float] = field(default_factory=dict)
    U: Dict[int, float] = field(default_factory=dict)

    def q(self, s: int, a: int) -> float:
        return self.Q.get(s, {}).get(a, 0.0)


@dataclass
class SweepStats:
    adds: int = 0
    deletes: int = 0
    pops: int = 0
    backups: int = 0


class Sweeper:
    """Owner of a ``TransitionTable`` and its ``SweepTables``."""

    def __init__(self, config: SweeperConfig | None = None, debug: bool = False):
        self.config = config or SweeperConfig()
        self.table = TransitionTable(debug=debug)
        self.tables = SweepTables()
        self.pq = PriorityQueue()
        self.stats = SweepStats()
        self.debug = debug

    @property
    def gamma(self) -> float:
        return self.config.gamma

    def _requeue(self, s: int, v: float) -> None:
        diff = abs(self.tables.U.get(s, 0.0) - v)
        if diff > self.config.p_min:
            self.pq.push(s, diff)
        else:
            self.pq.discard(s)

    def apply_add(self, t: TransitionRecord) -> None:
        s, a, r, s2 = t
        n = self.table.add(t)
        tables = self.tables
        qs = tables.Q.setdefault(s, {})
        q = qs.get(a, 0.0)
        qs[a] = (q * (n - 1) + r + self.config.gamma * tables.U.get(s2, 0.0)) / n
        v = max(qs.values())
        tables.V[s] = v
        self._requeue(s, v)
        self.stats.adds += 1

    def apply_delete(self, t: TransitionRecord) -> None:
        s, a, r, s2 = t
        n = self.table.delete(t)
        tables = self.tables
        qs = tables.Q[s]
        if n > 0:
            qs[a] = (qs[a] * (n + 1) - (r + self.config.gamma * tables.U.get(s2, 0.0))) / n
        else:
            del qs[a]
        if qs:
            v = max(qs.values())
        else:
            del tables.Q[s]
            v = 0.0
        tables.V[s] = v
        self._requeue(s, v)
        self.stats.deletes += 1

    def process(self, adds: Sequence[TransitionRecord] = (), deletes: Sequence[TransitionRecord] = ()) -> None:
        """Apply a batch: every add first, then every delete."""
        for t in adds:
            self.apply_add(t)
        for t in deletes:
            self.apply_delete(t)

    def sweep_step(self) -> bool:
        """Pop the top state and propagate its value change to predecessors."""
        if not self.pq:
            return False
        self._sweep(1)
        return True

    def sweep(self, max_pops: Optional[int] = None) -> int:
        """Sweep until the queue empties or ``max_pops`` states were popped."""
        if max_pops is None:
            max_pops = -1
        return self._sweep(max_pops)

    def _sweep(self, max_pops: int) -> int:
        pq = self.pq
        Q, V, U = self.tables.Q, self.tables.V, self.tables.U
        preds_of = self.table.preds
        n_sa = self.table.n_sa
        gamma = self.config.gamma
        p_min = self.config.p_min
        push, discard, pop = pq.push, pq.discard, pq.pop
        pops = backups = 0
        while pq and pops != max_pops:
            s2, _ = pop()
            v2 = V.get(s2, 0.0)
            du = v2 - U.get(s2, 0.0)
            U[s2] = v2
            pops += 1
            preds = preds_of.get(s2)
            if not preds:
                continue
            g = gamma * du
            for key, c in preds.items():
                s, a = key
                qs = Q[s]
                qs[a] += g * c / n_sa[key]
                v = max(qs.values())
                V[s] = v
                diff = U.get(s, 0.0) - v
                if diff < 0.0:
                    diff = -diff
                if diff > p_min:
                    push(s, diff)
                else:
                    discard(s)
            backups += len(preds)
        self.stats.pops += pops
        self.stats.backups += backups
        return pops

    def value_query(self, s: int, n_actions: Optional[int] = None) -> Dict[int, Tuple[float, int]]:
        """``{a: (Q, N_sa)}`` for state ``s``; unobserved actions report ``(0.0, 0)``."""
        qs = self.tables.Q.get(s, {})
        acts = range(n_actions) if n_actions is not None else sorted(qs)
        return {a: (qs.get(a, 0.0), self.table.count(s, a)) for a in acts}

    def q_estimates(self, s: int, n_actions: int) -> List[Optional[QEstimate]]:
        return [q_estimate(s, a, self.table, self.tables) for a in range(n_actions)]

    def recompute_error(self) -> float:
        """Largest gap between stored Q and ``mean r + gamma * sum p U`` from the counts."""
        worst = 0.0
        U = self.tables.U
        for (s, a), succ in self.table.successors.items():
            n = self.table.n_sa[(s, a)]
            ref = self.table.reward_sum[(s, a)] / n
            ref += self.config.gamma * sum(c * U.get(s2, 0.0) for s2, c in succ.items()) / n
            worst = max(worst, abs(ref - self.tables.Q[s][a]))
        return worst

    def max_residual(self) -> float:
        states = set(self.tables.V) | set(self.tables.U)
        return max((abs(self.tables.V.get(s, 0.0) - self.tables.U.get(s, 0.0)) for s in states), default=0.0)

    def dump(self, fh: IO[str]) -> None:
        """Write ``Q s a q n`` and ``V s v u`` lines."""
        t = self.tables
        for s in sorted(t.Q):
            for a in sorted(t.Q[s]):
                fh.write(f"Q {s} {a} {t.Q[s][a]!r} {self.table.count(s, a)}\n")
        for s in sorted(set(t.V) | set(t.U)):
            fh.write(f"V {s} {t.V.get(s, 0.0)!r} {t.U.get(s, 0.0)!r}\n")


_SHUTDOWN = object()


class SweeperService:
    """Runs a ``Sweeper`` on its own thread.

    Clients talk to it only through :meth:`put_add`, :meth:`put_delete` and
    the query methods; every payload is an immutable tuple. Pending adds and
    deletes are always applied before a query is answered, so a query sees
    every transition its caller enqueued before asking.
    """

    def __init__(self, sweeper: Sweeper | None = None, max_batch: Optional[int] = None,
                 stats_interval: Optional[float] = None):
        self.sweeper = sweeper or Sweeper()
        self.max_batch = max_batch
        self.stats_interval = stats_interval
        self.add_q: "queue.SimpleQueue[TransitionRecord]" = queue.SimpleQueue()
        self.delete_q: "queue.SimpleQueue[TransitionRecord]" = queue.SimpleQueue()
        self.query_q: "queue.SimpleQueue[object]" = queue.SimpleQueue()
        self.stats_log: List[dict] = []
        self._wake = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._error: Optional[BaseException] = None

    # --- client side

    def start(self) -> "SweeperService":
        self._thread = threading.Thread(target=self.run, name="sweeper", daemon=True)
        self._thread.start()
        return self

    def put_add(self, t: TransitionRecord) -> None:
        self.add_q.put(TransitionRecord(*t))
        self._wake.set()

    def put_delete(self, t: TransitionRecord) -> None:
        self.delete_q.put(TransitionRecord(*t))
        self._wake.set()

    def _ask(self, kind: str, *args):
        if self._error is not None:
            raise RuntimeError("sweeper thread failed") from self._error
        fut: Future = Future()
        self.query_q.put((kind, args, fut))
        self._wake.set()
        return fut.result()

    def value_query(self, s: int, n_actions: Optional[int] = None):
        return self._ask("value", s, n_actions)

    def q_estimates(self, s: int, n_actions: int):
        return self._ask("estimate", s, n_actions)

    def stats(self) -> dict:
        return self._ask("stats")

    def wait_idle(self, timeout: float = 60.0) -> bool:
        """Block until queues are drained and the priority queue is empty."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self._ask("idle"):
                return True
            time.sleep(0.001)
        return False

    def close(self, timeout: float = 60.0) -> None:
        self.query_q.put(_SHUTDOWN)
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout)
        if self._error is not None:
            raise RuntimeError("sweeper thread failed") from self._error

    # --- service side

    def _drain(self, limit: Optional[int]) -> int:
        sw = self.sweeper
        # every delete counted here was enqueued after its matching add
        n_del = self.delete_q.qsize()
        done = 0
        while limit is None or done < limit:
            try:
                t = self.add_q.get_nowait()
            except queue.Empty:
                break
            sw.apply_add(t)
            done += 1
        else:
            return done
        if limit is not None:
            n_del = min(n_del, limit)
        for _ in range(n_del):
            sw.apply_delete(self.delete_q.get_nowait())
        return done + n_del

    def _snapshot_stats(self) -> dict:
        st = self.sweeper.stats
        return {"adds": st.adds, "deletes": st.deletes, "pops": st.pops, "backups": st.backups,
                "add_queue": self.add_q.qsize(), "delete_queue": self.delete_q.qsize(),
                "priority_queue": len(self.sweeper.pq)}

    def _answer(self, msg) -> None:
        kind, args, fut = msg
        sw = self.sweeper
        if kind == "value":
            fut.set_result(sw.value_query(*args))
        elif kind == "estimate":
            fut.set_result(sw.q_estimates(*args))
        elif kind == "stats":
            fut.set_result(self._snapshot_stats())
        elif kind == "idle":
            fut.set_result(not sw.pq and self.add_q.empty() and self.delete_q.empty())
        else:
            fut.set_exception(ValueError(f"unknown query {kind!r}"))

    def run(self) -> None:
        try:
            self._loop()
        except BaseException as exc:  # surfaced to clients through _ask/close
            self._error = exc
            logger.exception("sweeper loop crashed")
            while True:
                try:
                    msg = self.query_q.get_nowait()
                except queue.Empty:
                    break
                if msg is not _SHUTDOWN:
                    msg[2].set_exception(exc)

    def _loop(self) -> None:
        sw = self.sweeper
        last_stats = time.monotonic()
        while True:
            self._wake.clear()
            self._drain(self.max_batch)
            while True:
                try:
                    msg = self.query_q.get_nowait()
                except queue.Empty:
                    break
                if msg is _SHUTDOWN:
                    self._drain(None)
                    return
                self._drain(None)
                self._answer(msg)
            if self.stats_interval is not None and time.monotonic() - last_stats >= self.stats_interval:
                self.stats_log.append(self._snapshot_stats())
                last_stats = time.monotonic()
            if not self.add_q.empty() or not self.delete_q.empty():
                continue
            if sw.pq:
                # short bursts keep query latency bounded
                sw.sweep(64)
            else:
                self._wake.wait(0.05)
