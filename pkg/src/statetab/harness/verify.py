"""Verification suites: sweeper vs exact solver, gradient checks, coherence invariants.

Every check returns a :class:`CheckResult`; a suite is a list of them.
The command line ``verify`` subcommand prints one line per check and
exits nonzero if any fails.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .. import envs
from ..agent import Agent, AgentConfig, LocalLink
from ..oracles import random_empirical_mdp, value_iteration
from ..sweeper import Sweeper, SweeperConfig
from ..tabular_model import TransitionRecord
from ..tabulators import GridTabulator
from ..variational import (Minibatch, ReassignmentRequest, VariationalConfig, draw_noise, free_energy_and_grad,
                           init_params, param_group)
from ..qlookup import q_estimate


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3g} (limit {self.threshold:g}) {self.detail} [{self.seconds:.1f}s]"


def _timed(fn: Callable[[], CheckResult]) -> CheckResult:
    t0 = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t0
    return res


def _q_gap(qa: Dict, qb: Dict) -> float:
    """Largest Q difference; a pair present on only one side counts as infinite."""
    if set(qa) != set(qb):
        return float("inf")
    return max((abs(qa[k] - qb[k]) for k in qa), default=0.0)


def sweeper_q(sw: Sweeper) -> Dict[Tuple[int, int], float]:
    return {(s, a): q for s, qs in sw.tables.Q.items() for a, q in qs.items()}


# ---------------------------------------------------------------- oracle suite

def oracle_equivalence(n_mdps: int = 200, seed: int = 0, gamma: float = 0.99, p_min: float = 1e-9,
                       tol: float = 1e-6) -> CheckResult:
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(n_mdps):
        _, trans = random_empirical_mdp(rng, max_states=50, max_actions=4, max_transitions=500)
        sw = Sweeper(SweeperConfig(gamma, p_min))
        sw.process(trans)
        sw.sweep()
        worst = max(worst, _q_gap(sweeper_q(sw), value_iteration(trans, gamma)))
    return CheckResult("sweeper matches value iteration", worst <= tol, worst, tol, f"({n_mdps} MDPs)")


def add_delete_cancellation(n_sequences: int = 100, seed: int = 1, gamma: float = 0.99, p_min: float = 1e-9,
                            tol: float = 1e-6) -> CheckResult:
    """Interleave adds, deletes and partial sweeps; compare with a table built from the survivors."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(n_sequences):
        _, trans = random_empirical_mdp(rng, max_states=30, max_actions=3, max_transitions=300)
        sw = Sweeper(SweeperConfig(gamma, p_min))
        live: List[TransitionRecord] = []
        pending = list(trans)
        while pending:
            k = rng.randint(1, 40)
            batch, pending = pending[:k], pending[k:]
            live.extend(batch)
            rng.shuffle(live)
            n_del = rng.randint(0, len(live) // 3)
            dels, live = live[:n_del], live[n_del:]
            sw.process(batch, dels)
            sw.sweep(rng.randint(0, 50))
        sw.sweep()
        if not live:
            # everything deleted: the table and Q must be empty
            worst = max(worst, 0.0 if not sweeper_q(sw) and not sw.table.n_sa else float("inf"))
            continue
        fresh = Sweeper(SweeperConfig(gamma, p_min))
        fresh.process(live)
        fresh.sweep()
        worst = max(worst, _q_gap(sweeper_q(sw), sweeper_q(fresh)),
                    _q_gap(sweeper_q(sw), value_iteration(live, gamma)))
    return CheckResult("add/delete cancellation", worst <= tol, worst, tol, f"({n_sequences} sequences)")


def oracle_suite(quick: bool = False) -> List[CheckResult]:
    n = 20 if quick else 200
    return [_timed(lambda: oracle_equivalence(n)), _timed(lambda: add_delete_cancellation(n // 2))]


# ---------------------------------------------------------------- gradient check

def toy_gradcheck(seed: int, d: int = 4, batch: int = 6, h: float = 1e-6) -> Dict[str, float]:
    """Per-group ``|g - fd| / (|g| + |fd|)`` for one random toy model and batch."""
    cfg = VariationalConfig(d=d, k=1, obs_dim=2, n_actions=2, hidden=(8,), seed=seed)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    for v in params.values():
        v += rng.normal(0.0, 0.3, size=v.shape)   # move init.logits off zero too
    first = np.zeros(batch, dtype=bool)
    first[: max(1, batch // 3)] = True
    mb = Minibatch(rng.normal(size=(batch, cfg.n_in)), rng.normal(size=(batch, cfg.n_in)),
                   rng.normal(size=(batch, cfg.obs_dim)), rng.integers(0, cfg.n_actions, batch), first)
    noise = draw_noise(cfg, mb, rng)
    _, grads = free_energy_and_grad(params, cfg, mb, noise)

    def total():
        return free_energy_and_grad(params, cfg, mb, noise, need_grad=False)[0].total

    g_all: Dict[str, List[float]] = {}
    fd_all: Dict[str, List[float]] = {}
    for name, arr in params.items():
        group = param_group(name)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = total()
            flat[i] = old - h
            down = total()
            flat[i] = old
            fd_all.setdefault(group, []).append((up - down) / (2 * h))
            g_all.setdefault(group, []).append(grads[name].reshape(-1)[i])
    out = {}
    for group in g_all:
        g = np.array(g_all[group])
        fd = np.array(fd_all[group])
        denom = np.linalg.norm(g) + np.linalg.norm(fd)
        out[group] = float(np.linalg.norm(g - fd) / denom) if denom > 0 else 0.0
    return out


def gradcheck_suite(n_seeds: int = 10, tol: float = 1e-4) -> List[CheckResult]:
    t0 = time.perf_counter()
    per_group: Dict[str, float] = {}
    for seed in range(n_seeds):
        for group, err in toy_gradcheck(seed).items():
            per_group[group] = max(per_group.get(group, 0.0), err)
    elapsed = time.perf_counter() - t0
    results = [CheckResult(f"gradient check [{g}]", e <= tol, e, tol, f"({n_seeds} seeds)")
               for g, e in sorted(per_group.items())]
    for r in results:
        r.seconds = elapsed / len(results)
    return results


# ---------------------------------------------------------------- invariants

def coherence_check(n_episodes: int = 50, seed: int = 2, capacity: int = 300) -> CheckResult:
    """Random play with injected relabels and evictions; then rebuild the table from memory."""
    rng = random.Random(seed)
    spec = envs.plusmaze(max_steps=30)
    env = envs.Maze(spec, seed=seed)
    agent = Agent(GridTabulator().fit(), LocalLink(Sweeper(), sweeps_per_step=20), spec.n_actions, spec.obs_dim,
                  AgentConfig(warmup_steps=10 ** 9, capacity=capacity, seed=seed))

    def inject(ag):
        if rng.random() < 0.2:
            mem = ag.memory
            reqs = []
            for _ in range(rng.randint(1, 4)):
                ep = rng.choice(list(mem.episodes))
                t = rng.randrange(len(mem.episodes[ep]))
                reqs.append(ReassignmentRequest(ep, t, rng.randrange(1 << 10)))
            ag.apply_reassignments(reqs)
        return False

    for _ in range(n_episodes):
        agent.run_episode(env, "train", step_hook=inject)
    agent.link.quiesce()
    table = agent.link.table
    table.check_invariants()
    live = {(s, a, s2): c for s, a, s2, c in table.triples()}
    rebuilt = {(s, a, s2): c for s, a, s2, c in agent.memory.rebuild_table().triples()}
    mismatches = sum(1 for k in set(live) | set(rebuilt) if live.get(k) != rebuilt.get(k))
    evicted = agent.memory._next_id - len(agent.memory.episodes)
    return CheckResult("memory/table coherence", mismatches == 0, mismatches, 0,
                       f"({n_episodes} episodes, {evicted} evicted)")


def _popcount(x: int) -> int:
    return bin(x).count("1")


def hamming_identity(n_tables: int = 50, seed: int = 3, gamma: float = 0.9, tol: float = 1e-9) -> CheckResult:
    """``q_estimate`` against a brute-force merged-state backup from the raw transitions."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(n_tables):
        n_states = rng.randint(2, 12)
        codes = rng.sample(range(1 << 6), n_states)
        n_actions = rng.randint(1, 3)
        trans = [TransitionRecord(rng.choice(codes), rng.randrange(n_actions), round(rng.uniform(-1, 1), 2),
                                  rng.choice(codes)) for _ in range(rng.randint(1, 60))]
        sw = Sweeper(SweeperConfig(gamma, 1e-12))
        sw.process(trans)
        sw.sweep()
        U = sw.tables.U
        for _ in range(10):
            s = rng.randrange(1 << 6)
            a = rng.randrange(n_actions)
            observed = {t.src for t in trans if t.action == a}
            est = q_estimate(s, a, sw.table, sw.tables)
            if not observed:
                worst = max(worst, 0.0 if est is None else float("inf"))
                continue
            m = min(_popcount(s ^ o) for o in observed)
            merged = [t for t in trans if t.action == a and _popcount(s ^ t.src) == m]
            brute = sum(t.reward + gamma * U.get(t.dst, 0.0) for t in merged) / len(merged)
            if est is None or est.m != m or est.support != len(merged):
                worst = float("inf")
            else:
                worst = max(worst, abs(est.value - brute))
    return CheckResult("hamming aggregate identity", worst <= tol, worst, tol, f"({n_tables} tables)")


def invariants_suite(quick: bool = False) -> List[CheckResult]:
    return [_timed(lambda: coherence_check(20 if quick else 50)), _timed(lambda: hamming_identity())]


SUITES = {"oracle": oracle_suite, "gradcheck": lambda quick=False: gradcheck_suite(3 if quick else 10),
          "invariants": invariants_suite}


def run_suite(name: str, quick: bool = False) -> List[CheckResult]:
    if name == "all":
        return [r for n in SUITES for r in SUITES[n](quick=quick)]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES) + ['all']}")
    return SUITES[name](quick=quick)
