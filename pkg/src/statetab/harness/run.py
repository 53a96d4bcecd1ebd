"""Execute an :class:`ExperimentConfig`: train, evaluate every epoch, apply schedule events.

Outputs in ``<output_dir>/<name>/``:

* ``epochs.csv``: one row per test epoch (header ``# statetab-epochs v1``)
* ``training.csv``: one row per variational step, learned tabulator only
  (header ``# statetab-training v1``)
* ``summary.json``: final reward, convergence step, event responses
* ``table.txt`` and ``values.txt``: end-of-run table and Q/V/U snapshots
"""

from __future__ import annotations

import csv
import json
import logging
import os
from pathlib import Path
from statistics import median
from typing import Dict, List, Optional

import numpy as np

from .. import envs
from ..agent import Agent, AgentConfig, LocalLink, ServiceLink
from ..sweeper import Sweeper, SweeperConfig, SweeperService
from ..tabulators import GridTabulator, LearnedTabulator, LSHTabulator
from .config import FORCED_RUNS, ExperimentConfig
from .experiments import grid_for, substream

logger = logging.getLogger(__name__)

OUTPUT_ENV = "STATETAB_OUTPUT_DIR"

EPOCH_COLUMNS = ["step", "mean_reward", "episodes", "mean_lookup_m", "exact_lookup_pct",
                 "revisited_pct", "reassign_rate", "greedy_steps"]
TRAINING_COLUMNS = ["train_step", "step", "reconstruction", "transition", "entropy", "free_energy", "reassigned"]


def output_root(cfg: ExperimentConfig) -> Path:
    """``$STATETAB_OUTPUT_DIR`` wins over the config's ``output_dir``."""
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def make_tabulator(cfg: ExperimentConfig, spec: envs.MazeSpec):
    params = dict(cfg.tabulator)
    kind = params.pop("kind", "grid")
    if kind == "grid":
        if not params:
            return grid_for(spec)
        return GridTabulator(**params).fit()
    dummy = np.zeros((1, spec.obs_dim * (params.get("k", 0) + 1)))
    if kind == "lsh":
        return LSHTabulator(seed=substream(cfg.seed, "lsh"), **params).fit(dummy)
    params.setdefault("k", cfg.agent.get("k", 0))
    return LearnedTabulator(obs_dim=spec.obs_dim, n_actions=spec.n_actions,
                            seed=substream(cfg.seed, "variational"), **params).fit()


class Runner:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.spec = envs.make_maze(cfg.preset, **cfg.maze)
        self.env = envs.Maze(self.spec, seed=substream(cfg.seed, "env"))
        self.probe = envs.Maze(self.spec, seed=substream(cfg.seed, "probe"))
        sw_params = dict(cfg.sweeper)
        self.mode = sw_params.pop("mode", "sync")
        sweeps_per_step = sw_params.pop("sweeps_per_step", None)
        self.sweeper = sweeper = Sweeper(SweeperConfig(**sw_params))
        self.service = None
        if self.mode == "threaded":
            self.service = SweeperService(sweeper)
            link = ServiceLink(self.service)
        else:
            link = LocalLink(sweeper, sweeps_per_step)
        agent_cfg = AgentConfig(**{**cfg.agent, "seed": substream(cfg.seed, "agent")})
        self.tabulator = make_tabulator(cfg, self.spec)
        self.agent = Agent(self.tabulator, link, self.spec.n_actions, self.spec.obs_dim, agent_cfg)
        self.epochs: List[Dict] = []
        self.events: List[Dict] = []
        self._last = {"lookups": 0, "lookup_distance": 0, "exact": 0, "reassigned": 0, "candidates": 0}

    # --- schedule

    def apply(self, ev) -> None:
        env, probe = self.env, self.probe
        if ev.kind == "enable_teleporter":
            env.enable_teleporter(ev.arg)
            probe.enable_teleporter(ev.arg)
        elif ev.kind == "reverse_rewards":
            env.reverse_rewards()
            probe.reverse_rewards()
        elif ev.kind == "lift_barrier":
            env.set_barrier(False)
            probe.set_barrier(False)
        elif ev.kind == "forced_run":
            start, script = FORCED_RUNS[self.cfg.preset][ev.arg]
            self.agent.feed_trace(env.forced_run(script, start))
        logger.info("step %d: %s %s", self.agent.step_count, ev.kind, ev.arg)
        self.events.append({"step": self.agent.step_count, "kind": ev.kind, "arg": ev.arg,
                            "epoch_index": len(self.epochs)})

    # --- measurement

    def greedy_steps(self) -> float:
        n = self.cfg.greedy_rollouts
        if n <= 0:
            return float("nan")
        cap = self.spec.max_steps
        lengths = []
        for _ in range(n):
            r = self.agent.greedy_rollout(self.probe, max_steps=cap)
            zone = r["zone"]
            good = zone is not None and self.probe.spec.terminals[zone].reward > 0
            lengths.append(r["steps"] if good else cap)
        return float(median(lengths))

    def test_epoch(self) -> Dict:
        agent = self.agent
        returns, steps = [], 0
        while steps < max(self.cfg.test_steps, 1):
            ep = agent.run_episode(self.probe, "eval")
            returns.append(ep["return"])
            steps += ep["steps"]
        c = agent.counters
        last = self._last
        d_look = c.lookups - last["lookups"]
        d_cand = c.reassign_candidates - last["candidates"]
        row = {
            "step": agent.step_count,
            "mean_reward": float(np.mean(returns)),
            "episodes": len(returns),
            "mean_lookup_m": (c.lookup_distance - last["lookup_distance"]) / d_look if d_look else 0.0,
            "exact_lookup_pct": 100.0 * (c.exact_lookups - last["exact"]) / d_look if d_look else 0.0,
            "revisited_pct": c.snapshot()["revisited_pct"],
            "reassign_rate": (c.reassigned - last["reassigned"]) / d_cand if d_cand else 0.0,
            "greedy_steps": self.greedy_steps(),
        }
        self._last = {"lookups": c.lookups, "lookup_distance": c.lookup_distance, "exact": c.exact_lookups,
                      "reassigned": c.reassigned, "candidates": c.reassign_candidates}
        return row

    # --- main loop

    def run(self) -> Dict:
        cfg, agent = self.cfg, self.agent
        pending = list(cfg.schedule)
        if self.service is not None:
            self.service.start()
        try:
            next_epoch = cfg.epoch_every
            while agent.step_count < cfg.total_steps:
                while pending and pending[0].step <= agent.step_count:
                    self.apply(pending.pop(0))
                stop_at = min([next_epoch] + [ev.step for ev in pending if ev.step > agent.step_count])
                hook = lambda ag, n=stop_at: ag.step_count >= n
                agent.run_episode(self.env, "train", step_hook=hook)
                if agent.step_count >= next_epoch:
                    self.epochs.append(self.test_epoch())
                    next_epoch += cfg.epoch_every
            while pending:
                self.apply(pending.pop(0))
            agent.link.quiesce()
            return self.summary()
        finally:
            if self.service is not None:
                self.service.close()

    def summary(self) -> Dict:
        cfg = self.cfg
        rewards = [e["mean_reward"] for e in self.epochs]
        final = rewards[-1] if rewards else float("nan")
        conv = None
        for i in range(len(rewards)):
            if all(abs(r - final) <= 0.1 * max(abs(final), 0.1) for r in rewards[i:]):
                conv = self.epochs[i]["step"]
                break
        responses = []
        for ev in self.events:
            i = ev["epoch_index"]
            before = self.epochs[i - 1] if i > 0 else None
            after = self.epochs[i:]
            resp = dict(ev)
            resp["policy_switch_step"] = None
            resp["recovery_step"] = None
            if before is not None:
                for e in after:
                    if e["greedy_steps"] <= 0.75 * before["greedy_steps"]:
                        resp["policy_switch_step"] = e["step"] - ev["step"]
                        break
                if before["mean_reward"] > 0:
                    for e in after:
                        if e["mean_reward"] >= 0.8 * before["mean_reward"]:
                            resp["recovery_step"] = e["step"] - ev["step"]
                            break
            resp["scaled_step"] = ev["step"] * cfg.scale
            responses.append(resp)
        return {
            "name": cfg.name, "preset": cfg.preset, "seed": cfg.seed, "mode": self.mode,
            "total_steps": self.agent.step_count, "scale": cfg.scale,
            "scaled_total_steps": self.agent.step_count * cfg.scale,
            "final_mean_reward": final, "convergence_step": conv,
            "scaled_convergence_step": conv * cfg.scale if conv is not None else None,
            "events": responses, "train_steps": self.agent.counters.train_steps,
        }


def write_outputs(runner: Runner, summary: Dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "epochs.csv", "w", newline="") as fh:
        fh.write("# statetab-epochs v1\n")
        w = csv.DictWriter(fh, fieldnames=EPOCH_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in runner.epochs:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    fe = runner.agent.counters.free_energy
    if fe:
        with open(out_dir / "training.csv", "w", newline="") as fh:
            fh.write("# statetab-training v1\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAINING_COLUMNS)
            for i, (r, t, h, f, changed, step) in enumerate(fe):
                w.writerow([i, step, repr(r), repr(t), repr(h), repr(f), changed])
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    sweeper = runner.sweeper
    with open(out_dir / "table.txt", "w") as fh:
        sweeper.table.dump(fh)
    with open(out_dir / "values.txt", "w") as fh:
        sweeper.dump(fh)


def run(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> Dict:
    runner = Runner(cfg)
    summary = runner.run()
    out = out_dir if out_dir is not None else output_root(cfg) / cfg.name
    write_outputs(runner, summary, Path(out))
    summary["output_dir"] = str(out)
    return summary
