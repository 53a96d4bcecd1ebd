import io
import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from statetab.oracles import random_empirical_mdp, value_iteration
from statetab.sweeper import Sweeper, SweeperConfig, SweeperService
from statetab.tabular_model import TableDesyncError, TransitionRecord as T

from conftest import A, B, C, random_multiset


def q_map(sw):
    return {(s, a): q for s, qs in sw.tables.Q.items() for a, q in qs.items()}


def check_v_invariant(sw):
    for s in set(sw.tables.V) | set(sw.table.actions):
        acts = sw.table.observed_actions(s)
        want = max(sw.tables.q(s, a) for a in acts) if acts else 0.0
        assert sw.tables.V.get(s, 0.0) == want


def test_config_validation():
    with pytest.raises(ValueError):
        SweeperConfig(gamma=1.0)
    with pytest.raises(ValueError):
        SweeperConfig(p_min=-1)


def test_first_add():
    sw = Sweeper(SweeperConfig(gamma=0.99))
    sw.apply_add(T(A, 0, 1.0, B))
    assert sw.tables.q(A, 0) == 1.0
    assert sw.tables.V[A] == 1.0
    assert sw.pq.priority(A) == 1.0
    sw.apply_add(T(A, 0, 0.0, B))
    assert sw.tables.q(A, 0) == 0.5


def test_add_uses_committed_successor_value():
    sw = Sweeper(SweeperConfig(gamma=0.5))
    sw.tables.U[B] = 2.0
    sw.apply_add(T(A, 0, 0.0, B))
    assert sw.tables.q(A, 0) == 1.0


def test_delete_to_empty():
    sw = Sweeper(debug=True)
    sw.apply_add(T(A, 0, 1.0, B))
    sw.apply_delete(T(A, 0, 1.0, B))
    assert sw.tables.q(A, 0) == 0.0
    assert A not in sw.tables.Q
    assert sw.tables.V[A] == 0.0


def test_delete_reverses_running_mean():
    sw = Sweeper()
    sw.apply_add(T(A, 0, 1.0, B))
    sw.apply_add(T(A, 0, 0.0, B))
    sw.apply_delete(T(A, 0, 1.0, B))
    assert sw.tables.q(A, 0) == pytest.approx(0.0, abs=1e-15)


def test_delete_v_is_max_over_remaining_actions():
    # three actions at A with Q = 0.2, 0.9, 0.5; removing action 1 leaves max 0.5
    sw = Sweeper(SweeperConfig(gamma=0.9))
    sw.apply_add(T(A, 0, 0.2, B))
    sw.apply_add(T(A, 1, 0.9, B))
    sw.apply_add(T(A, 2, 0.5, C))
    assert sw.tables.V[A] == 0.9
    sw.apply_delete(T(A, 1, 0.9, B))
    assert sw.tables.V[A] == 0.5
    sw.apply_delete(T(A, 2, 0.5, C))
    assert sw.tables.V[A] == 0.2
    check_v_invariant(sw)


def test_delete_missing_propagates():
    with pytest.raises(TableDesyncError):
        Sweeper().apply_delete(T(A, 0, 0.0, B))


def test_sweep_step_on_empty_queue():
    sw = Sweeper()
    assert sw.sweep_step() is False
    assert sw.stats.pops == 0


def test_chain_fixed_point():
    sw = Sweeper(SweeperConfig(gamma=0.5, p_min=1e-9))
    trans = [T(A, 0, 0.0, B), T(B, 0, 1.0, B)]
    sw.process(trans)
    sw.sweep()
    assert sw.tables.q(B, 0) == pytest.approx(2.0, abs=1e-8)
    assert sw.tables.q(A, 0) == pytest.approx(1.0, abs=1e-8)
    vi = value_iteration(trans, 0.5)
    assert vi[(B, 0)] == pytest.approx(2.0, abs=1e-12)
    assert vi[(A, 0)] == pytest.approx(1.0, abs=1e-12)


def test_popped_state_has_zero_residual():
    sw = Sweeper(SweeperConfig(gamma=0.9))
    sw.process([T(A, 0, 1.0, B), T(B, 0, 1.0, C), T(C, 1, 0.5, C)])
    while sw.pq:
        s, p = sw.pq.pop()
        sw.pq.push(s, 1e9)   # make sure sweep_step pops this one
        sw.sweep_step()
        self_loop = any(ps == s for ps, _, _ in sw.table.predecessors(s))
        if not self_loop:
            assert sw.tables.U[s] == sw.tables.V.get(s, 0.0)


def test_small_random_mdp_matches_oracle(rng):
    codes = rng.sample(range(100), 5)
    trans = [T(rng.choice(codes), rng.randrange(2), rng.choice([0.0, 1.0, -0.5]), rng.choice(codes))
             for _ in range(30)]
    sw = Sweeper(SweeperConfig(0.99, 1e-9))
    sw.process(trans)
    sw.sweep()
    vi = value_iteration(trans, 0.99)
    assert set(vi) == set(q_map(sw))
    assert max(abs(vi[k] - q_map(sw)[k]) for k in vi) <= 1e-6


def test_fully_cyclic_mdp(rng):
    # no terminal states at all: ergodic random MDP
    codes = list(range(6))
    trans = [T(s, a, rng.uniform(-1, 1), rng.choice(codes)) for s in codes for a in range(2) for _ in range(3)]
    sw = Sweeper(SweeperConfig(0.9, 1e-12))
    sw.process(trans)
    sw.sweep()
    vi = value_iteration(trans, 0.9)
    assert max(abs(vi[k] - q_map(sw)[k]) for k in vi) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 9), st.sampled_from([1e-4, 1e-6, 1e-9]))
def test_oracle_tolerance_scales_with_cutoff(seed, p_min):
    gamma = 0.9
    rng = random.Random(seed)
    _, trans = random_empirical_mdp(rng, max_states=15, max_actions=3, max_transitions=120)
    sw = Sweeper(SweeperConfig(gamma, p_min))
    sw.process(trans)
    sw.sweep()
    vi = value_iteration(trans, gamma)
    err = max(abs(vi[k] - q_map(sw)[k]) for k in vi)
    assert err <= p_min * gamma / (1 - gamma) + 1e-9
    check_v_invariant(sw)
    assert sw.recompute_error() < 1e-9


def test_queue_entries_exceed_cutoff(rng):
    sw = Sweeper(SweeperConfig(0.99, 0.05))
    for t in random_multiset(rng, n=60):
        sw.apply_add(t)
        for s in list(sw.pq._live):
            assert sw.pq.priority(s) > 0.05
    sw.sweep()
    assert sw.max_residual() <= 0.05


def test_value_query():
    sw = Sweeper()
    assert sw.value_query(A, 3) == {0: (0.0, 0), 1: (0.0, 0), 2: (0.0, 0)}
    sw.apply_add(T(A, 0, 1.0, B))
    assert sw.value_query(A, 3) == {0: (1.0, 1), 1: (0.0, 0), 2: (0.0, 0)}
    assert sw.value_query(A) == {0: (sw.tables.Q[A][0], 1)}


def test_dump_lines():
    sw = Sweeper(SweeperConfig(0.5, 1e-9))
    sw.process([T(A, 0, 0.0, B), T(B, 0, 1.0, B)])
    sw.sweep()
    buf = io.StringIO()
    sw.dump(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith(f"Q {A} 0 ")
    assert any(l.startswith(f"V {B} ") for l in lines)
    q, n = lines[0].split()[3:]
    assert float(q) == pytest.approx(1.0, abs=1e-8) and n == "1"


# ---------------------------------------------------------------- service

@pytest.fixture
def service():
    svc = SweeperService(Sweeper(SweeperConfig(0.9, 1e-9))).start()
    yield svc
    svc.close()


def test_service_liveness(service):
    service.put_add(T(A, 0, 1.0, B))
    assert service.wait_idle(10)
    assert service.value_query(A, 1) == {0: (1.0, 1)}
    assert not service.sweeper.pq


def test_service_query_sees_prior_adds(service):
    for i in range(200):
        service.put_add(T(i, 0, 1.0, i + 1))
        est = service.q_estimates(i, 1)[0]
        assert est is not None and est.m == 0


def test_service_burst_matches_sync(rng):
    trans = random_multiset(rng, n_states=40, n=2000)
    ref = Sweeper(SweeperConfig(0.9, 1e-9))
    ref.process(trans)
    ref.sweep()
    svc = SweeperService(Sweeper(SweeperConfig(0.9, 1e-9)), max_batch=37, stats_interval=0.0).start()
    for t in trans:
        svc.put_add(t)
    assert svc.wait_idle(60)
    stats = svc.stats()
    svc.close()
    assert stats["adds"] == 2000 and stats["priority_queue"] == 0
    got = q_map(svc.sweeper)
    want = q_map(ref)
    assert max(abs(got[k] - want[k]) for k in want) < 1e-6
    assert svc.stats_log


def test_service_deletes_after_their_adds(rng):
    svc = SweeperService(Sweeper(), max_batch=3).start()
    trans = random_multiset(rng, n=300)
    errors = []

    def producer():
        try:
            for t in trans:
                svc.put_add(t)
                svc.put_delete(t)
        except Exception as exc:   # pragma: no cover - surfaced below
            errors.append(exc)

    th = threading.Thread(target=producer)
    th.start()
    th.join()
    assert svc.wait_idle(30)
    svc.close()
    assert not errors
    assert len(svc.sweeper.table) == 0


def test_service_close_drains():
    svc = SweeperService().start()
    for i in range(50):
        svc.put_add(T(i, 0, 0.0, i))
    svc.close()
    assert svc.sweeper.stats.adds == 50


def test_service_surfaces_crash():
    svc = SweeperService().start()
    svc.put_delete(T(A, 0, 0.0, B))
    with pytest.raises(RuntimeError):
        svc.close()
