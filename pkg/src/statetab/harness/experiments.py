"""Desk-scale experiment protocols on the preset mazes.

Each protocol builds its own maze, tabulator and agent from a master seed
and returns a plain dict of measurements. They run in synchronous mode so
a seed fully determines the result.
"""

from __future__ import annotations

import random
from dataclasses import replace
from statistics import median
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import spearmanr

from .. import envs
from ..agent import Agent, AgentConfig, LocalLink
from ..sweeper import Sweeper, SweeperConfig
from ..tabulators import GridTabulator, LearnedTabulator


def substream(master: int, name: str) -> int:
    """Deterministic per-component seed derived from the master seed."""
    return random.Random(f"{master}:{name}").getrandbits(32)


def grid_for(spec: envs.MazeSpec) -> GridTabulator:
    if spec.obs_dim == 4:
        tab = GridTabulator(cell_sizes=(1.0, 1.0, 1.0, 1.0), bits=(8, 8, 2, 2), lows=(0, 0, -1, -1))
    else:
        tab = GridTabulator(cell_sizes=(1.0, 1.0), bits=(8, 8))
    return tab.fit()


def build_agent(spec: envs.MazeSpec, seed: int, agent_cfg: AgentConfig,
                sweeper_cfg: Optional[SweeperConfig] = None, tabulator=None,
                sweeps_per_step: Optional[int] = None):
    env = envs.Maze(spec, seed=substream(seed, "env"))
    tab = tabulator if tabulator is not None else grid_for(spec)
    link = LocalLink(Sweeper(sweeper_cfg or SweeperConfig()), sweeps_per_step)
    agent = Agent(tab, link, spec.n_actions, spec.obs_dim, replace(agent_cfg, seed=substream(seed, "agent")))
    return env, agent


def train_steps(agent: Agent, env, n_steps: int, hook=None) -> List[dict]:
    """Run training episodes until ``n_steps`` more agent steps have been taken."""
    target = agent.step_count + n_steps
    episodes = []
    stop = lambda ag: ag.step_count >= target or (hook is not None and hook(ag))
    while agent.step_count < target:
        episodes.append(agent.run_episode(env, "train", step_hook=stop))
    return episodes


def test_epoch(agent: Agent, env, n_steps: int) -> dict:
    """Evaluation episodes (``eps_eval``) totalling at least ``n_steps`` steps."""
    returns, steps = [], 0
    while steps < n_steps:
        ep = agent.run_episode(env, "eval")
        returns.append(ep["return"])
        steps += ep["steps"]
    return {"mean_reward": float(np.mean(returns)), "episodes": len(returns), "steps": steps}


# ---------------------------------------------------------------- shortcut transfer

TMAZE_AGENT = AgentConfig(warmup_steps=500, anneal_steps=1500, eps_end=0.1, capacity=100_000)


def shortcut_transfer(seed: int, train: int = 3000, agent_cfg: AgentConfig = TMAZE_AGENT) -> dict:
    """Train with the right arm barred, then replay one forced run from that arm into the stem."""
    spec = envs.tmaze()
    env, agent = build_agent(spec, seed, agent_cfg)
    train_steps(agent, env, train)
    agent.link.quiesce()
    known = set(agent.link.table.actions) | set(agent.link.table.preds)

    env.set_barrier(False)
    trace = env.forced_run(envs.TMAZE_FORCED_SCRIPT, envs.TMAZE_FORCED_START)
    agent.feed_trace(trace)
    agent.link.quiesce()

    jx, jy = envs.TMAZE_JUNCTION
    tab = agent.tabulator
    V = agent.link.sweeper.tables.V
    new_states: Dict[int, float] = {}
    for obs, pose in zip(trace.observations, trace.poses):
        in_right_arm = pose.x > jx + 0.5 and abs(pose.y - jy) < 0.5
        code = tab.encode(obs)
        if in_right_arm and code not in known:
            new_states[code] = abs(pose.x - jx) + abs(pose.y - jy)
    values = {s: V.get(s, 0.0) for s in new_states}
    nonzero = sum(1 for v in values.values() if v != 0.0)
    dist = [new_states[s] for s in new_states]
    vals = [values[s] for s in new_states]
    rho = float(spearmanr(dist, vals)[0]) if len(set(dist)) > 1 and len(set(vals)) > 1 else float("nan")
    return {"new_states": len(new_states), "nonzero_frac": nonzero / len(new_states) if new_states else 0.0,
            "rank_corr": rho, "values": vals, "distances": dist}


# ---------------------------------------------------------------- teleporter

HMAZE_AGENT = AgentConfig(warmup_steps=5000, anneal_steps=10000, eps_end=0.1, capacity=5000)


def greedy_path_length(agent: Agent, env, n: int = 5, cap: int = 100) -> float:
    lengths = []
    for _ in range(n):
        r = agent.greedy_rollout(env, max_steps=cap)
        lengths.append(r["steps"] if r["zone"] == "reward" else cap)
    return float(median(lengths))


def teleporter(seed: int, forced_run: bool = True, pretrain: int = 20000, budget: int = 2000,
               check_every: int = 250, agent_cfg: AgentConfig = HMAZE_AGENT, max_steps: int = 200) -> dict:
    spec = envs.hmaze(max_steps=max_steps)
    env, agent = build_agent(spec, seed, agent_cfg)
    probe = envs.Maze(spec, seed=substream(seed, "probe"))
    train_steps(agent, env, pretrain)
    agent.link.quiesce()
    before = greedy_path_length(agent, probe)

    event_step = agent.step_count
    env.enable_teleporter("dead_end")
    probe.enable_teleporter("dead_end")
    if forced_run:
        trace = env.forced_run(envs.HMAZE_FORCED_SCRIPTS["rewarded"], envs.HMAZE_FORCED_START)
        agent.feed_trace(trace)
    curve = []
    switched_at = None
    while agent.step_count - event_step < budget:
        train_steps(agent, env, check_every)
        length = greedy_path_length(agent, probe)
        curve.append((agent.step_count - event_step, length))
        if switched_at is None and length <= 0.75 * before:
            switched_at = agent.step_count - event_step
    return {"before": before, "curve": curve, "switched_at": switched_at,
            "exploited": switched_at is not None, "event_step": event_step}


# ---------------------------------------------------------------- reward reversal

PLUS_AGENT = AgentConfig(warmup_steps=500, anneal_steps=2000, eps_end=0.1, capacity=1000)


def reward_reversal(seed: int, budget: int = 10000, epoch_every: int = 250, test_steps: int = 300,
                    agent_cfg: AgentConfig = PLUS_AGENT) -> dict:
    """Train for ``budget`` steps, reverse the arm rewards, and track recovery."""
    spec = envs.plusmaze()
    env, agent = build_agent(spec, seed, agent_cfg)
    probe = envs.Maze(spec, seed=substream(seed, "probe"))
    curve = []
    while agent.step_count < budget:
        train_steps(agent, env, epoch_every)
        curve.append((agent.step_count, test_epoch(agent, probe, test_steps)["mean_reward"]))
    pre = float(np.mean([r for _, r in curve[-2:]]))
    env.reverse_rewards()
    probe.reverse_rewards()
    recovered_at = None
    post = []
    limit = budget + budget // 4
    while agent.step_count < limit:
        train_steps(agent, env, epoch_every)
        r = test_epoch(agent, probe, test_steps)["mean_reward"]
        post.append((agent.step_count, r))
        if recovered_at is None and r >= 0.8 * pre:
            recovered_at = agent.step_count - budget
    return {"pre_level": pre, "pre_curve": curve, "post_curve": post, "recovered_at": recovered_at}


# ---------------------------------------------------------------- hazards

RIM_AGENT = AgentConfig(warmup_steps=2000, anneal_steps=8000, eps_end=0.1, capacity=100_000)


def hazard_avoidance(seed: int, train: int = 20000, rollouts: int = 50,
                     agent_cfg: AgentConfig = RIM_AGENT) -> dict:
    spec = envs.rimmaze(hazards=True)
    env, agent = build_agent(spec, seed, agent_cfg)
    probe = envs.Maze(spec, seed=substream(seed, "probe"))
    train_steps(agent, env, train)
    agent.link.quiesce()
    steps = hazard = reached = 0
    for _ in range(rollouts):
        r = agent.greedy_rollout(probe, max_steps=spec.max_steps)
        steps += r["steps"]
        hazard += r["hazard_steps"]
        reached += r["zone"] == "center"
    return {"hazard_frac": hazard / steps, "steps": steps, "reached_frac": reached / rollouts}


# ---------------------------------------------------------------- learned tabulator

LEARNED_AGENT = AgentConfig(warmup_steps=500, anneal_steps=4000, eps_end=0.1, capacity=100_000, train_every=4)


def learned_tmaze(seed: int, n_train: int = 2000, d: int = 8, batch_size: int = 64, lr: float = 1e-3,
                  agent_cfg: AgentConfig = LEARNED_AGENT, sweeps_per_step: Optional[int] = 50) -> dict:
    spec = envs.tmaze()
    tab = LearnedTabulator(d=d, k=0, obs_dim=spec.obs_dim, n_actions=spec.n_actions, lr=lr,
                           batch_size=batch_size, seed=substream(seed, "variational")).fit()
    env, agent = build_agent(spec, seed, agent_cfg, tabulator=tab, sweeps_per_step=sweeps_per_step)
    stop = lambda ag: ag.counters.train_steps >= n_train
    while agent.counters.train_steps < n_train:
        agent.run_episode(env, "train", step_hook=stop)
    fe = np.array([row[3] for row in agent.counters.free_energy])
    agent.link.quiesce()
    mismatches = _count_mismatch(agent)
    return {"fe_first": float(fe[:100].mean()), "fe_last": float(fe[-100:].mean()),
            "revisited_pct": agent.counters.snapshot()["revisited_pct"],
            "reassign_pct": agent.counters.snapshot()["reassign_pct"], "steps": agent.step_count,
            "table_mismatches": mismatches}


def _count_mismatch(agent: Agent) -> int:
    live = dict(((s, a, s2), c) for s, a, s2, c in agent.link.table.triples())
    rebuilt = dict(((s, a, s2), c) for s, a, s2, c in agent.memory.rebuild_table().triples())
    keys = set(live) | set(rebuilt)
    return sum(1 for k in keys if live.get(k) != rebuilt.get(k))
