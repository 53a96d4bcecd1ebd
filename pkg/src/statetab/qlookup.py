"""Hamming-neighbour Q estimates for action selection.

For an unobserved pair ``(s, a)`` the estimate is the experience-weighted
mean of ``Q(s', a)`` over the observed states ``s'`` closest to ``s`` in
Hamming distance. Observed pairs return their own table value (distance 0).
"""

from __future__ import annotations

import random
from typing import TYPE_CHECKING, NamedTuple, Optional, Sequence

if TYPE_CHECKING:
    from .sweeper import SweepTables
    from .tabular_model import TransitionTable


class QEstimate(NamedTuple):
    value: float
    m: int
    support: int


def hamming_distance(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def nearest_observed(s: int, a: int, table: "TransitionTable"):
    """Return ``(m, [(state, N_sa), ...])`` for the nearest states observed under ``a``."""
    registry = table.by_action.get(a)
    if not registry:
        return None, []
    n = registry.get(s)
    if n is not None:
        return 0, [(s, n)]
    best = 65
    hits = []
    for other, n in registry.items():
        m = (s ^ other).bit_count()
        if m < best:
            best = m
            hits = [(other, n)]
        elif m == best:
            hits.append((other, n))
    return best, hits


def q_estimate(s: int, a: int, table: "TransitionTable", tables: "SweepTables") -> Optional[QEstimate]:
    """Estimate ``Q(s, a)``; ``None`` if action ``a`` was never observed anywhere."""
    m, hits = nearest_observed(s, a, table)
    if m is None:
        return None
    Q = tables.Q
    num = 0.0
    support = 0
    for other, n in hits:
        num += n * Q[other][a]
        support += n
    return QEstimate(num / support, m, support)


def greedy_action(estimates: Sequence[Optional[QEstimate]], rng: random.Random) -> int:
    """Argmax over the estimates, ties broken uniformly.

    Missing estimates rank below every real one; if all are missing the
    action is uniform over the full range.
    """
    best = None
    ties = []
    for a, est in enumerate(estimates):
        if est is None:
            continue
        if best is None or est.value > best:
            best = est.value
            ties = [a]
        elif est.value == best:
            ties.append(a)
    if not ties:
        return rng.randrange(len(estimates))
    if len(ties) == 1:
        return ties[0]
    return ties[rng.randrange(len(ties))]
