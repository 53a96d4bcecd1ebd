"""Sweep throughput benchmark on synthetic transition sets."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import List

from ..agent import LocalLink
from ..sweeper import Sweeper, SweeperConfig, SweeperService
from ..tabular_model import TransitionRecord

TOPOLOGIES = ("random", "chain", "fan_in")


@dataclass
class BenchResult:
    topology: str
    n_transitions: int
    n_states: int
    backups: int
    pops: int
    seconds: float
    threaded: bool

    @property
    def rate(self) -> float:
        return self.backups / self.seconds if self.seconds > 0 else float("inf")

    def line(self) -> str:
        mode = "threaded" if self.threaded else "sync"
        return (f"{self.topology:7s} {mode:8s} transitions={self.n_transitions} states={self.n_states} "
                f"backups={self.backups} pops={self.pops} seconds={self.seconds:.4f} "
                f"backups/s={self.rate:,.0f}")


def synthetic_transitions(n: int, topology: str = "random", seed: int = 0) -> List[TransitionRecord]:
    """``n`` transitions over ``max(2, n // 10)`` states with random 32-bit codes.

    ``random``: each pair has up to three successors, sparse rewards.
    ``chain``: states in a line, reward at the far end.
    ``fan_in``: every state leads to one of a few hubs, so hubs have huge predecessor sets.
    """
    if topology not in TOPOLOGIES:
        raise ValueError(f"topology must be one of {TOPOLOGIES}")
    rng = random.Random(seed)
    n_states = max(2, n // 10)
    codes = rng.sample(range(1 << 32), n_states)
    out = []
    if topology == "random":
        succ = {}
        for _ in range(n):
            s = rng.choice(codes)
            a = rng.randrange(4)
            dests = succ.setdefault((s, a), [rng.choice(codes) for _ in range(rng.randint(1, 3))])
            r = 1.0 if rng.random() < 0.05 else 0.0
            out.append(TransitionRecord(s, a, r, rng.choice(dests)))
    elif topology == "chain":
        for i in range(n):
            j = i % (n_states - 1)
            a = rng.randrange(2)
            nxt = codes[j + 1] if a == 0 else codes[max(j - 1, 0)]
            out.append(TransitionRecord(codes[j], a, 1.0 if j + 1 == n_states - 1 and a == 0 else 0.0, nxt))
    else:
        hubs = codes[: max(1, n_states // 100)]
        for i in range(n):
            s = rng.choice(codes)
            out.append(TransitionRecord(s, rng.randrange(4), rng.uniform(-1, 1), rng.choice(hubs)))
    return out


def bench_sweeps(n_transitions: int = 10_000, topology: str = "random", seed: int = 0,
                 threaded: bool = False, gamma: float = 0.99, p_min: float = 5e-5) -> BenchResult:
    """Flood the add channel with a synthetic transition set and time sweeping to quiescence.

    The clock covers applying the adds and every sweep until the priority
    queue is empty.
    """
    trans = synthetic_transitions(n_transitions, topology, seed)
    sweeper = Sweeper(SweeperConfig(gamma, p_min))
    if threaded:
        service = SweeperService(sweeper)
        t0 = time.perf_counter()
        service.start()
        for t in trans:
            service.put_add(t)
        if not service.wait_idle(600.0):
            raise TimeoutError("sweeper did not quiesce")
        elapsed = time.perf_counter() - t0
        service.close()
    else:
        link = LocalLink(sweeper)
        for t in trans:
            link.put_add(t)
        t0 = time.perf_counter()
        link.quiesce()
        elapsed = time.perf_counter() - t0
    st = sweeper.stats
    n_states = len(set(sweeper.table.actions) | set(sweeper.table.preds))
    return BenchResult(topology, len(trans), n_states, st.backups, st.pops, elapsed, threaded)
