"""Reference solvers used to check the sweeper.

Nothing here touches ``Sweeper`` or ``TransitionTable``: the empirical MDP
is rebuilt from the raw transition list with dense numpy arrays.
"""

from __future__ import annotations

import random
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .tabular_model import TransitionRecord


def empirical_mdp(transitions: Sequence[TransitionRecord]):
    """Dense ``(states, pairs, P, R)`` from a transition multiset.

    ``pairs`` lists observed ``(s, a)``; ``P[i, j]`` is the empirical
    probability that pair ``i`` leads to ``states[j]`` and ``R[i]`` is the
    mean reward of pair ``i``.
    """
    states = sorted({t.src for t in transitions} | {t.dst for t in transitions})
    idx = {s: i for i, s in enumerate(states)}
    pairs = sorted({(t.src, t.action) for t in transitions})
    pidx = {p: i for i, p in enumerate(pairs)}
    counts = np.zeros((len(pairs), len(states)))
    rsum = np.zeros(len(pairs))
    for t in transitions:
        i = pidx[(t.src, t.action)]
        counts[i, idx[t.dst]] += 1
        rsum[i] += t.reward
    n = counts.sum(axis=1)
    return states, pairs, counts / n[:, None], rsum / n


def value_iteration(transitions: Sequence[TransitionRecord], gamma: float,
                    tol: float = 1e-13, max_iter: int = 1_000_000) -> Dict[Tuple[int, int], float]:
    """Optimal ``Q`` of the empirical MDP; states without observed actions have ``V = 0``.

    Runs policy iteration with exact linear solves, then Bellman sweeps
    until the update is below ``tol``.
    """
    if not transitions:
        return {}
    states, pairs, P, R = empirical_mdp(transitions)
    idx = {s: i for i, s in enumerate(states)}
    owner = np.array([idx[s] for s, _ in pairs])
    n_states = len(states)

    def greedy_v(q):
        v = np.full(n_states, -np.inf)
        np.maximum.at(v, owner, q)
        v[np.isneginf(v)] = 0.0
        return v

    def greedy_policy(q):
        best = {}
        for i, (s, _) in enumerate(pairs):
            j = idx[s]
            if j not in best or q[i] > q[best[j]] + 1e-15:
                best[j] = i
        return best

    q = R.copy()
    policy = greedy_policy(q)
    for _ in range(200):
        # V_pi solves V = R_pi + gamma P_pi V on states with actions; 0 elsewhere
        A = np.eye(n_states)
        b = np.zeros(n_states)
        for j, i in policy.items():
            A[j] -= gamma * P[i]
            b[j] = R[i]
        v = np.linalg.solve(A, b)
        q = R + gamma * P @ v
        new_policy = greedy_policy(q)
        if new_policy == policy:
            break
        policy = new_policy
    for _ in range(max_iter):
        q_new = R + gamma * P @ greedy_v(q)
        delta = np.max(np.abs(q_new - q))
        q = q_new
        if delta < tol:
            break
    return {p: float(q[i]) for i, p in enumerate(pairs)}


def random_empirical_mdp(rng: random.Random, max_states: int = 50, max_actions: int = 4,
                         max_transitions: int = 500, terminal_frac: float = 0.15,
                         reward_scale: float = 1.0) -> Tuple[int, List[TransitionRecord]]:
    """Sample transitions by rolling out random episodes in a random sparse MDP.

    Returns ``(n_actions, transitions)``. A fraction of states are terminal
    (no outgoing actions); each ``(s, a)`` has 1-3 possible successors and a
    small set of possible rewards, so empirical means and probabilities vary.
    State codes are random 16-bit integers.
    """
    n_states = rng.randint(2, max_states)
    n_actions = rng.randint(1, max_actions)
    n_trans = rng.randint(1, max_transitions)
    codes = rng.sample(range(1 << 16), n_states)
    n_term = min(n_states - 1, max(0, round(terminal_frac * n_states)))
    terminal = set(codes[:n_term])
    live = codes[n_term:]
    dynamics = {}
    for s in live:
        for a in range(n_actions):
            k = rng.randint(1, 3)
            dests = [rng.choice(codes) for _ in range(k)]
            rewards = [round(rng.uniform(-1, 1) * reward_scale, 3) for _ in range(2)]
            dynamics[(s, a)] = (dests, rewards)
    out = []
    s = rng.choice(live)
    while len(out) < n_trans:
        a = rng.randrange(n_actions)
        dests, rewards = dynamics[(s, a)]
        s2 = rng.choice(dests)
        out.append(TransitionRecord(s, a, rng.choice(rewards), s2))
        s = rng.choice(live) if s2 in terminal or rng.random() < 0.05 else s2
    return n_actions, out
