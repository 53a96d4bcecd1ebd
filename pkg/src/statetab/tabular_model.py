"""Empirical transition model over binary state codes.

States are d-bit codes stored as plain Python ints; actions are small ints.
The table keeps exact visit counts for every observed ``(s, a, s')`` triple,
a reverse index used by prioritized sweeping, and a per-action registry of
states in which that action has been taken (the Hamming lookup domain).
"""

from __future__ import annotations

from collections import defaultdict
from typing import IO, Dict, Iterable, Iterator, NamedTuple, Set, Tuple

MAX_BITS = 64


class TableDesyncError(KeyError):
    """Raised when deleting a transition the table never recorded."""


class TransitionRecord(NamedTuple):
    src: int
    action: int
    reward: float
    dst: int


def check_code(code: int, d: int) -> int:
    """Validate that ``code`` is a non-negative integer using at most ``d`` bits."""
    if not 1 <= d <= MAX_BITS:
        raise ValueError(f"d must be in [1, {MAX_BITS}], got {d}")
    code = int(code)
    if code < 0 or code >> d:
        raise ValueError(f"state code {code:#x} does not fit in {d} bits")
    return code


class TransitionTable:
    """Sparse visit counts ``N_sa`` and ``N^{s'}_{sa}`` with add/delete.

    Only the sweeper's execution context should touch an instance; there is
    no internal locking.
    """

    def __init__(self, debug: bool = False):
        self.debug = debug
        self.n_sa: Dict[Tuple[int, int], int] = {}
        self.successors: Dict[Tuple[int, int], Dict[int, int]] = {}
        # s' -> {(s, a): N^{s'}_{sa}}; the same count objects as ``successors``
        self.preds: Dict[int, Dict[Tuple[int, int], int]] = {}
        # a -> {s: N_sa}
        self.by_action: Dict[int, Dict[int, int]] = defaultdict(dict)
        # s -> set of actions a with N_sa > 0
        self.actions: Dict[int, Set[int]] = {}
        self.reward_sum: Dict[Tuple[int, int], float] = {}

    def __len__(self) -> int:
        return sum(self.n_sa.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TransitionTable):
            return NotImplemented
        return self.successors == other.successors

    def add(self, t: TransitionRecord) -> int:
        """Record one transition; returns the new ``N_sa``."""
        s, a, r, s2 = t
        key = (s, a)
        n = self.n_sa.get(key, 0) + 1
        self.n_sa[key] = n
        succ = self.successors.get(key)
        if succ is None:
            succ = self.successors[key] = {}
            self.actions.setdefault(s, set()).add(a)
        c = succ.get(s2, 0) + 1
        succ[s2] = c
        self.preds.setdefault(s2, {})[key] = c
        self.by_action[a][s] = n
        self.reward_sum[key] = self.reward_sum.get(key, 0.0) + r
        if self.debug:
            self.check_invariants()
        return n

    def delete(self, t: TransitionRecord) -> int:
        """Remove one previously added transition; returns the new ``N_sa``.

        The reward need not match the stored add; only the ``(s, a, s')``
        triple must exist.
        """
        s, a, r, s2 = t
        key = (s, a)
        succ = self.successors.get(key)
        if succ is None or s2 not in succ:
            raise TableDesyncError(f"no transition {s:#x} -{a}-> {s2:#x} in table")
        n = self.n_sa[key] - 1
        c = succ[s2] - 1
        if c:
            succ[s2] = c
            self.preds[s2][key] = c
        else:
            del succ[s2]
            p = self.preds[s2]
            del p[key]
            if not p:
                del self.preds[s2]
        if n:
            self.n_sa[key] = n
            self.by_action[a][s] = n
            self.reward_sum[key] -= r
        else:
            del self.n_sa[key], self.successors[key], self.reward_sum[key]
            del self.by_action[a][s]
            acts = self.actions[s]
            acts.discard(a)
            if not acts:
                del self.actions[s]
        if self.debug:
            self.check_invariants()
        return n

    def count(self, s: int, a: int, s2: int | None = None) -> int:
        if s2 is None:
            return self.n_sa.get((s, a), 0)
        return self.successors.get((s, a), {}).get(s2, 0)

    def predecessors(self, s2: int) -> Set[Tuple[int, int, int]]:
        return {(s, a, c) for (s, a), c in self.preds.get(s2, {}).items()}

    def observed_states(self, a: int) -> Iterable[int]:
        return self.by_action.get(a, {}).keys()

    def observed_actions(self, s: int) -> Set[int]:
        return self.actions.get(s, set())

    def mean_reward(self, s: int, a: int) -> float:
        return self.reward_sum[(s, a)] / self.n_sa[(s, a)]

    def triples(self) -> Iterator[Tuple[int, int, int, int]]:
        """Yield ``(s, a, s', count)`` in sorted order."""
        for (s, a) in sorted(self.successors):
            for s2, c in sorted(self.successors[(s, a)].items()):
                yield s, a, s2, c

    def check_invariants(self) -> None:
        for key, succ in self.successors.items():
            assert succ, f"empty successor map for {key}"
            assert self.n_sa[key] == sum(succ.values()), f"sum invariant broken at {key}"
            for s2, c in succ.items():
                assert c > 0
                assert self.preds[s2][key] == c, f"reverse index mismatch at {key}->{s2}"
            s, a = key
            assert self.by_action[a][s] == self.n_sa[key]
            assert a in self.actions[s]
        assert set(self.n_sa) == set(self.successors)
        n_rev = sum(len(p) for p in self.preds.values())
        assert n_rev == sum(len(v) for v in self.successors.values())
        n_reg = sum(len(v) for v in self.by_action.values())
        assert n_reg == len(self.n_sa)

    # --- text snapshot: one ``from_code action to_code count`` line per triple

    def dump(self, fh: IO[str]) -> None:
        for s, a, s2, c in self.triples():
            fh.write(f"{s} {a} {s2} {c}\n")

    def dumps(self) -> str:
        return "".join(f"{s} {a} {s2} {c}\n" for s, a, s2, c in self.triples())

    @classmethod
    def load(cls, fh: Iterable[str]) -> "TransitionTable":
        """Rebuild counts from a snapshot; reward sums are not stored and stay 0."""
        table = cls()
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                s, a, s2, c = (int(x) for x in line.split())
            except ValueError as exc:
                raise ValueError(f"line {lineno}: expected 'from action to count': {line!r}") from exc
            if c <= 0:
                raise ValueError(f"line {lineno}: count must be positive")
            for _ in range(c):
                table.add(TransitionRecord(s, a, 0.0, s2))
        return table

    @classmethod
    def from_transitions(cls, transitions: Iterable[TransitionRecord]) -> "TransitionTable":
        table = cls()
        for t in transitions:
            table.add(t)
        return table
