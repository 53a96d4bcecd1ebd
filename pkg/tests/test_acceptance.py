"""Acceptance gate: one test and one PASS/FAIL line per criterion."""

import time
from statistics import median

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from statetab.harness import bench, experiments, verify

SEEDS = range(5)


def report(n, passed, text):
    line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {text}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert passed, line


def test_criterion_01_sweeper_matches_value_iteration():
    t0 = time.perf_counter()
    res = verify.oracle_equivalence(n_mdps=200, gamma=0.99, p_min=1e-9, tol=1e-6)
    secs = time.perf_counter() - t0
    report(1, res.passed and secs < 30, f"max |Q - Q_VI| = {res.value:.2e} over 200 MDPs (<= 1e-6), {secs:.1f}s (< 30s)")


def test_criterion_02_add_delete_cancellation():
    res = verify.add_delete_cancellation(n_sequences=100, tol=1e-6)
    report(2, res.passed, f"max |Q(A then D) - Q(A minus D)| = {res.value:.2e} over 100 sequences (<= 1e-6)")


def test_criterion_03_memory_table_coherence():
    res = verify.coherence_check(n_episodes=50)
    report(3, res.passed, f"{int(res.value)} mismatches after 50 episodes with reassignments {res.detail}")


def test_criterion_04_hamming_identity():
    res = verify.hamming_identity(n_tables=50, tol=1e-9)
    report(4, res.passed, f"max |q_estimate - brute force| = {res.value:.2e} over 50 tables (<= 1e-9)")


def test_criterion_05_gradient_check():
    t0 = time.perf_counter()
    results = verify.gradcheck_suite(n_seeds=10, tol=1e-4)
    secs = time.perf_counter() - t0
    worst = max(r.value for r in results)
    groups = ", ".join(f"{r.name.split('[')[1][:-1]}={r.value:.1e}" for r in results)
    report(5, all(r.passed for r in results) and secs < 60,
           f"max relative error {worst:.2e} (<= 1e-4) [{groups}], {secs:.1f}s (< 60s)")


@pytest.mark.slow
def test_criterion_06_shortcut_transfer():
    runs = [experiments.shortcut_transfer(seed) for seed in SEEDS]
    ok = [r["new_states"] > 0 and r["nonzero_frac"] >= 0.9 and r["rank_corr"] < 0 for r in runs]
    detail = "; ".join(f"seed {s}: {r['new_states']} new, {100 * r['nonzero_frac']:.0f}% nonzero, "
                       f"rho={r['rank_corr']:.2f}" for s, r in zip(SEEDS, runs))
    report(6, all(ok), f"{sum(ok)}/5 seeds (need 5/5) [{detail}]")


@pytest.mark.slow
def test_criterion_07_teleporter_exploitation():
    forced = [experiments.teleporter(seed, forced_run=True) for seed in SEEDS]
    blind = [experiments.teleporter(seed, forced_run=False) for seed in SEEDS]
    n_forced = sum(r["exploited"] for r in forced)
    n_blind = sum(r["exploited"] for r in blind)
    detail = ", ".join(f"{r['before']:.0f}->{min(l for _, l in r['curve']):.0f}" for r in forced)
    report(7, n_forced >= 4 and n_blind <= 2,
           f"forced run: {n_forced}/5 seeds cut greedy path >= 25% within 2000 steps (need >= 4) [{detail}]; "
           f"without: {n_blind}/5 (need <= 2)")


@pytest.mark.slow
def test_criterion_08_reward_reversal():
    budget = 10_000
    runs = [experiments.reward_reversal(seed, budget=budget) for seed in SEEDS]
    ok = [r["recovered_at"] is not None for r in runs]
    detail = ", ".join(f"pre={r['pre_level']:.2f} back at +{r['recovered_at']}" for r in runs)
    report(8, all(ok), f"{sum(ok)}/5 seeds regain 80% of pre-reversal reward within {budget // 4} steps "
                       f"(need 5/5) [{detail}]")


@pytest.mark.slow
def test_criterion_09_hazard_avoidance():
    runs = [experiments.hazard_avoidance(seed) for seed in SEEDS]
    frac = sum(r["hazard_frac"] * r["steps"] for r in runs) / sum(r["steps"] for r in runs)
    worst = max(r["hazard_frac"] for r in runs)
    reached = np.mean([r["reached_frac"] for r in runs])
    report(9, worst < 0.10, f"greedy steps on hazards: {100 * frac:.1f}% overall, worst seed {100 * worst:.1f}% "
                            f"(< 10%); {100 * reached:.0f}% of rollouts reach the centre")


def test_criterion_10_sweep_throughput():
    rates = [bench.bench_sweeps(10_000, "random", seed=s).rate for s in range(3)]
    rate = median(rates)
    report(10, rate >= 6000, f"{rate:,.0f} backups/s on a 10k-transition random MDP (>= 6,000)")


@pytest.mark.slow
def test_criterion_11_learned_tabulator():
    runs = [experiments.learned_tmaze(seed, n_train=2000, d=8) for seed in SEEDS]
    ok = [r["fe_last"] < r["fe_first"] and r["revisited_pct"] > 50 and r["table_mismatches"] == 0 for r in runs]
    detail = ", ".join(f"F {r['fe_first']:.1f}->{r['fe_last']:.1f} rev {r['revisited_pct']:.0f}%" for r in runs)
    report(11, sum(ok) >= 4, f"{sum(ok)}/5 seeds lower free energy and exceed 50% revisited (need >= 4) [{detail}]")
