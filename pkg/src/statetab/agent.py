"""The tabulation-side control loop.

The agent encodes observations into state codes, chooses epsilon-greedy
actions from Hamming-neighbour Q estimates, stores every step in replay
memory, and keeps the sweeper's transition table equal to the multiset of
transitions implied by the memory's current labels. Evicting an episode
and relabelling a stored step both emit matching delete/add items.
"""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .qlookup import greedy_action
from .sweeper import Sweeper
from .tabular_model import TransitionRecord, TransitionTable
from .tabulators import BaseTabulator, LearnedTabulator, ObservationHistory
from .variational import Minibatch, ReassignmentRequest


class Episode:
    """Steps ``0..T``; step 0 carries no action or reward."""

    __slots__ = ("obs", "states", "actions", "rewards", "closed")

    def __init__(self, obs0, s0: int):
        self.obs: List[np.ndarray] = [np.asarray(obs0, dtype=float)]
        self.states: List[int] = [s0]
        self.actions: List[Optional[int]] = [None]
        self.rewards: List[Optional[float]] = [None]
        self.closed = False

    def __len__(self) -> int:
        return len(self.states)

    def transition(self, t: int) -> TransitionRecord:
        """The transition that led into step ``t`` (``t >= 1``)."""
        return TransitionRecord(self.states[t - 1], self.actions[t], self.rewards[t], self.states[t])

    def transitions(self) -> Iterator[TransitionRecord]:
        for t in range(1, len(self.states)):
            yield self.transition(t)


class ReplayMemory:
    """Episodes keyed by a running id; capacity counts transitions.

    When a new transition pushes the total above capacity, whole closed
    episodes are evicted from the oldest end and their transitions
    returned for deletion.
    """

    def __init__(self, capacity: int = 500_000):
        self.capacity = capacity
        self.episodes: "OrderedDict[int, Episode]" = OrderedDict()
        self.n_transitions = 0
        self.n_steps = 0
        self._next_id = 0
        self.current: Optional[int] = None

    def __len__(self) -> int:
        return self.n_transitions

    def start_episode(self, obs0, s0: int) -> int:
        if self.current is not None:
            self.close_episode()
        ep = self._next_id
        self._next_id += 1
        self.episodes[ep] = Episode(obs0, s0)
        self.current = ep
        self.n_steps += 1
        return ep

    def close_episode(self) -> None:
        if self.current is not None:
            self.episodes[self.current].closed = True
            self.current = None

    def append(self, obs, s: int, a: int, r: float) -> Tuple[TransitionRecord, List[TransitionRecord]]:
        """Store a step in the open episode; returns its transition and any evicted transitions."""
        ep = self.episodes[self.current]
        ep.obs.append(np.asarray(obs, dtype=float))
        ep.states.append(s)
        ep.actions.append(a)
        ep.rewards.append(r)
        self.n_transitions += 1
        self.n_steps += 1
        return ep.transition(len(ep) - 1), self._evict()

    def _evict(self) -> List[TransitionRecord]:
        out: List[TransitionRecord] = []
        while self.n_transitions > self.capacity:
            ep_id, ep = next(iter(self.episodes.items()))
            if ep_id == self.current:
                break
            del self.episodes[ep_id]
            out.extend(ep.transitions())
            self.n_transitions -= len(ep) - 1
            self.n_steps -= len(ep)
        return out

    def state_at(self, ep: int, t: int) -> int:
        return self.episodes[ep].states[t]

    def relabel(self, ep_id: int, t: int, code: int) -> Tuple[List[TransitionRecord], List[TransitionRecord]]:
        """Change the label of one step; returns ``(deletes, adds)`` for the table."""
        ep = self.episodes[ep_id]
        if ep.states[t] == code:
            return [], []
        deletes, adds = [], []
        if t > 0:
            deletes.append(ep.transition(t))
        if t + 1 < len(ep):
            deletes.append(ep.transition(t + 1))
        ep.states[t] = code
        if t > 0:
            adds.append(ep.transition(t))
        if t + 1 < len(ep):
            adds.append(ep.transition(t + 1))
        return deletes, adds

    def transitions(self) -> Iterator[TransitionRecord]:
        for ep in self.episodes.values():
            yield from ep.transitions()

    def rebuild_table(self) -> TransitionTable:
        return TransitionTable.from_transitions(self.transitions())

    # --- minibatch access for the variational trainer

    def sample_indices(self, rng: np.random.Generator, n: int) -> List[Tuple[int, int]]:
        """``n`` uniform draws (with replacement) over every stored step."""
        ids = list(self.episodes)
        lengths = np.array([len(self.episodes[e]) for e in ids])
        flat = rng.integers(0, lengths.sum(), size=n)
        ends = np.cumsum(lengths)
        which = np.searchsorted(ends, flat, side="right")
        starts = ends - lengths
        return [(ids[w], int(f - starts[w])) for w, f in zip(which, flat)]

    def history(self, ep_id: int, t: int, k: int) -> np.ndarray:
        ep = self.episodes[ep_id]
        frames = []
        for i in range(t - k, t + 1):
            frames.append(ep.obs[i] if i >= 0 else np.zeros_like(ep.obs[0]))
        return np.concatenate(frames)

    def histories(self, index: Sequence[Tuple[int, int]], k: int) -> np.ndarray:
        return np.stack([self.history(e, t, k) for e, t in index])

    def windows(self, index: Sequence[Tuple[int, int]], k: int) -> Minibatch:
        hist = self.histories(index, k)
        prev = np.stack([self.history(e, t - 1, k) if t > 0 else np.zeros_like(hist[0]) for e, t in index])
        obs = np.stack([self.episodes[e].obs[t] for e, t in index])
        acts = np.array([self.episodes[e].actions[t] if t > 0 else 0 for e, t in index])
        first = np.array([t == 0 for _, t in index])
        return Minibatch(hist, prev, obs, acts, first)


class LocalLink:
    """Synchronous stand-in for the sweeper channels.

    Puts are buffered and applied (adds first, then deletes) before any
    query or sweep. ``pump`` runs up to ``sweeps_per_step`` pops, or
    sweeps to an empty queue when that is ``None``.
    """

    def __init__(self, sweeper: Optional[Sweeper] = None, sweeps_per_step: Optional[int] = None):
        self.sweeper = sweeper or Sweeper()
        self.sweeps_per_step = sweeps_per_step
        self._adds: List[TransitionRecord] = []
        self._deletes: List[TransitionRecord] = []

    def put_add(self, t: TransitionRecord) -> None:
        self._adds.append(t)

    def put_delete(self, t: TransitionRecord) -> None:
        self._deletes.append(t)

    def flush(self) -> None:
        if self._adds or self._deletes:
            adds, deletes = self._adds, self._deletes
            self._adds, self._deletes = [], []
            self.sweeper.process(adds, deletes)

    def pump(self, budget: Optional[int] = "default") -> int:
        self.flush()
        if budget == "default":
            budget = self.sweeps_per_step
        return self.sweeper.sweep(budget)

    def quiesce(self) -> None:
        self.flush()
        self.sweeper.sweep()

    def q_estimates(self, s: int, n_actions: int):
        self.flush()
        return self.sweeper.q_estimates(s, n_actions)

    def value_query(self, s: int, n_actions: Optional[int] = None):
        self.flush()
        return self.sweeper.value_query(s, n_actions)

    @property
    def table(self) -> TransitionTable:
        self.flush()
        return self.sweeper.table


class ServiceLink:
    """Channel link to a running :class:`SweeperService` thread.

    Sweeping happens on the service thread, so ``pump`` does nothing;
    ``quiesce`` blocks until the service is idle.
    """

    def __init__(self, service):
        self.service = service
        self.put_add = service.put_add
        self.put_delete = service.put_delete

    def pump(self, budget=None) -> int:
        return 0

    def quiesce(self, timeout: float = 600.0) -> None:
        if not self.service.wait_idle(timeout):
            raise TimeoutError("sweeper did not become idle")

    def q_estimates(self, s: int, n_actions: int):
        return self.service.q_estimates(s, n_actions)

    def value_query(self, s: int, n_actions: Optional[int] = None):
        return self.service.value_query(s, n_actions)

    @property
    def sweeper(self) -> Sweeper:
        # only safe to read while the service is idle
        self.quiesce()
        return self.service.sweeper

    @property
    def table(self) -> TransitionTable:
        return self.sweeper.table


@dataclass
class AgentConfig:
    eps_start: float = 1.0
    eps_end: float = 0.1
    anneal_steps: int = 200_000
    eps_eval: float = 0.05
    warmup_steps: int = 50_000
    train_every: int = 4
    train_start: Optional[int] = None
    capacity: int = 500_000
    k: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("eps_start", "eps_end", "eps_eval"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")

    def epsilon(self, step: int) -> float:
        if step < self.warmup_steps:
            return 1.0
        if self.anneal_steps <= 0:
            return self.eps_end
        frac = min(1.0, (step - self.warmup_steps) / self.anneal_steps)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


@dataclass
class AgentCounters:
    lookups: int = 0
    lookup_distance: int = 0
    exact_lookups: int = 0
    pairs_taken: int = 0
    pairs_revisited: int = 0
    reassigned: int = 0
    reassign_candidates: int = 0
    train_steps: int = 0
    free_energy: List[Tuple[float, float, float, float, int, int]] = field(default_factory=list)

    def snapshot(self) -> dict:
        return {
            "mean_lookup_m": self.lookup_distance / self.lookups if self.lookups else 0.0,
            "exact_lookup_pct": 100.0 * self.exact_lookups / self.lookups if self.lookups else 0.0,
            "revisited_pct": 100.0 * self.pairs_revisited / self.pairs_taken if self.pairs_taken else 0.0,
            "reassign_pct": 100.0 * self.reassigned / self.reassign_candidates if self.reassign_candidates else 0.0,
        }


class Agent:
    def __init__(self, tabulator: BaseTabulator, link, n_actions: int, obs_dim: int,
                 config: Optional[AgentConfig] = None):
        self.tabulator = tabulator
        self.link = link
        self.n_actions = n_actions
        self.config = config or AgentConfig()
        self.rng = random.Random(self.config.seed)
        self.memory = ReplayMemory(self.config.capacity)
        k = getattr(tabulator, "k", self.config.k)
        self.history = ObservationHistory(k, obs_dim)
        self.step_count = 0
        self.counters = AgentCounters()
        self.learned = isinstance(tabulator, LearnedTabulator)
        self._eval_state: Optional[int] = None
        self._episode: Optional[int] = None
        self._recording = True

    @property
    def train_start(self) -> int:
        c = self.config
        return c.warmup_steps if c.train_start is None else c.train_start

    def encode(self) -> int:
        return self.tabulator.encode(self.history.flat())

    # --- acting

    def act(self, s: int, eps: float) -> int:
        if eps > 0 and self.rng.random() < eps:
            return self.rng.randrange(self.n_actions)
        return greedy_action(self.link.q_estimates(s, self.n_actions), self.rng)

    def _select(self, s: int, eps: float) -> int:
        explore = eps > 0 and self.rng.random() < eps
        est = self.link.q_estimates(s, self.n_actions) if (not explore or self._recording) else None
        if explore:
            a = self.rng.randrange(self.n_actions)
        else:
            a = greedy_action(est, self.rng)
            if self._recording:
                e = est[a]
                if e is not None:
                    self.counters.lookups += 1
                    self.counters.lookup_distance += e.m
                    self.counters.exact_lookups += e.m == 0
        if self._recording:
            self.counters.pairs_taken += 1
            e = est[a]
            self.counters.pairs_revisited += e is not None and e.m == 0
        return a

    # --- memory and table bookkeeping

    def begin_episode(self, obs, record: bool = True) -> int:
        self._recording = record
        self.history.reset()
        self.history.push(obs)
        s = self.encode()
        if record:
            self._episode = self.memory.start_episode(obs, s)
        else:
            self._eval_state = s
        return s

    @property
    def state(self) -> int:
        if not self._recording:
            return self._eval_state
        # the episode may already be closed (terminal step) but is still stored
        return self.memory.episodes[self._episode].states[-1]

    def observe(self, obs, a: int, r: float, terminal: bool) -> int:
        self.history.push(obs)
        s = self.encode()
        if not self._recording:
            self._eval_state = s
            return s
        t, evicted = self.memory.append(obs, s, a, r)
        self.link.put_add(t)
        for old in evicted:
            self.link.put_delete(old)
        if terminal:
            self.memory.close_episode()
        return s

    def end_episode(self) -> None:
        if self._recording:
            self.memory.close_episode()

    def apply_reassignments(self, requests: Sequence[ReassignmentRequest]) -> int:
        changed = 0
        for ep, t, code in requests:
            if ep not in self.memory.episodes:
                continue
            deletes, adds = self.memory.relabel(ep, t, code)
            if not adds and not deletes:
                continue
            changed += 1
            for tr in adds:
                self.link.put_add(tr)
            for tr in deletes:
                self.link.put_delete(tr)
        return changed

    def maybe_train(self) -> None:
        if not self.learned or self.step_count < self.train_start:
            return
        if self.step_count % self.config.train_every:
            return
        fe, requests = self.tabulator.train_step(self.memory)
        n_cand = min(2 * self.tabulator.batch_size, self.memory.n_steps)
        changed = self.apply_reassignments(requests)
        c = self.counters
        c.train_steps += 1
        c.reassigned += changed
        c.reassign_candidates += n_cand
        c.free_energy.append((fe.reconstruction, fe.transition, fe.entropy, fe.total, changed, self.step_count))

    # --- episodes

    def run_episode(self, env, mode: str = "train", max_steps: Optional[int] = None,
                    step_hook=None) -> dict:
        """Play one episode; ``mode`` is ``train`` or ``eval``.

        Evaluation uses ``eps_eval`` and writes nothing to memory or the
        table. ``step_hook(agent)`` runs after every training step and may
        return True to stop early.
        """
        if mode not in ("train", "eval"):
            raise ValueError("mode must be 'train' or 'eval'")
        train = mode == "train"
        _, obs = env.reset()
        s = self.begin_episode(obs, record=train)
        ret = 0.0
        n = 0
        hazards = 0
        stopped = False
        while True:
            eps = self.config.epsilon(self.step_count) if train else self.config.eps_eval
            a = self._select(s, eps)
            out = env.step(a)
            ret += out.reward
            n += 1
            hazards += out.info.get("hazard", False)
            s = self.observe(out.observation, a, out.reward, out.terminal)
            if train:
                self.step_count += 1
                self.maybe_train()
                s = self.state
                self.link.pump()
                if step_hook is not None and step_hook(self):
                    stopped = True
            if out.terminal or stopped or (max_steps is not None and n >= max_steps):
                break
        self.end_episode()
        self._recording = True
        return {"return": ret, "steps": n, "zone": env.zone_hit, "hazard_steps": hazards,
                "terminal": out.terminal, "stopped": stopped}

    def feed_trace(self, trace) -> None:
        """Insert a scripted episode (forced run) as experience."""
        s = self.begin_episode(trace.observations[0], record=True)
        for o, a, r in zip(trace.observations[1:], trace.actions, trace.rewards):
            s = self.observe(o, a, r, False)
        self.end_episode()

    def greedy_rollout(self, env, max_steps: int = 200, pose=None) -> dict:
        """Epsilon-zero rollout that records nothing."""
        _, obs = env.reset(pose=pose)
        s = self.begin_episode(obs, record=False)
        poses = [env.pose]
        ret = 0.0
        hazards = 0
        n = 0
        out = None
        while n < max_steps:
            a = greedy_action(self.link.q_estimates(s, self.n_actions), self.rng)
            out = env.step(a)
            n += 1
            ret += out.reward
            hazards += out.info.get("hazard", False)
            poses.append(env.pose)
            s = self.observe(out.observation, a, out.reward, out.terminal)
            if out.terminal:
                break
        self._recording = True
        return {"return": ret, "steps": n, "zone": env.zone_hit, "hazard_steps": hazards,
                "poses": poses, "timeout": out is None or not out.terminal or out.info.get("timeout", False)}
