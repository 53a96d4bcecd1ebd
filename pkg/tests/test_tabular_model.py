import io

import pytest
from hypothesis import given, settings, strategies as st

from statetab.tabular_model import TableDesyncError, TransitionRecord as T, TransitionTable, check_code

from conftest import A, B, C


def test_single_add():
    tab = TransitionTable(debug=True)
    assert tab.add(T(A, 0, 1.0, B)) == 1
    assert tab.count(A, 0) == 1
    assert tab.count(A, 0, B) == 1
    assert tab.predecessors(B) == {(A, 0, 1)}


def test_repeat_add_accumulates():
    tab = TransitionTable(debug=True)
    tab.add(T(A, 0, 1.0, B))
    tab.add(T(A, 0, 1.0, B))
    assert tab.count(A, 0) == 2 and tab.count(A, 0, B) == 2


def test_two_successors_sum():
    tab = TransitionTable(debug=True)
    tab.add(T(A, 0, 0.0, B))
    tab.add(T(A, 0, 0.0, C))
    assert tab.count(A, 0) == 2
    assert tab.count(A, 0, B) == 1 and tab.count(A, 0, C) == 1
    tab.check_invariants()


def test_delete_inverse():
    tab = TransitionTable(debug=True)
    tab.add(T(A, 0, 1.0, B))
    tab.delete(T(A, 0, 1.0, B))
    assert len(tab) == 0
    assert not tab.n_sa and not tab.preds and not tab.actions
    assert list(tab.observed_states(0)) == []


def test_delete_keeps_other_successor():
    tab = TransitionTable(debug=True)
    tab.add(T(A, 0, 1.0, B))
    tab.add(T(A, 0, 0.0, C))
    assert tab.delete(T(A, 0, 1.0, B)) == 1
    assert tab.successors[(A, 0)] == {C: 1}
    assert tab.predecessors(B) == set()
    assert tab.mean_reward(A, 0) == 0.0


def test_delete_missing_raises():
    tab = TransitionTable()
    with pytest.raises(TableDesyncError):
        tab.delete(T(A, 0, 1.0, B))
    tab.add(T(A, 0, 1.0, B))
    with pytest.raises(TableDesyncError):
        tab.delete(T(A, 0, 1.0, C))


def test_delete_with_other_reward_accepted():
    tab = TransitionTable()
    tab.add(T(A, 0, 1.0, B))
    tab.delete(T(A, 0, -5.0, B))
    assert len(tab) == 0


def test_predecessors():
    tab = TransitionTable()
    assert tab.predecessors(0x99) == set()
    tab.add(T(A, 0, 0.0, C))
    tab.add(T(B, 1, 0.0, C))
    assert tab.predecessors(C) == {(A, 0, 1), (B, 1, 1)}


def test_observed_states():
    tab = TransitionTable()
    assert list(tab.observed_states(0)) == []
    tab.add(T(A, 0, 0.0, B))
    assert set(tab.observed_states(0)) == {A}
    assert list(tab.observed_states(1)) == []
    tab.delete(T(A, 0, 0.0, B))
    assert list(tab.observed_states(0)) == []


def test_check_code():
    assert check_code(0b111, 3) == 7
    with pytest.raises(ValueError):
        check_code(8, 3)
    with pytest.raises(ValueError):
        check_code(-1, 3)


def test_dump_load_roundtrip():
    tab = TransitionTable()
    for t in [T(A, 0, 1.0, B), T(A, 0, 0.0, B), T(A, 1, 0.0, C), T(B, 2, 0.5, A)]:
        tab.add(t)
    text = tab.dumps()
    assert text.splitlines()[0] == f"{A} 0 {B} 2"
    back = TransitionTable.load(io.StringIO(text))
    assert back == tab
    assert back.dumps() == text


def test_load_reports_line():
    with pytest.raises(ValueError, match="line 2"):
        TransitionTable.load(io.StringIO("1 0 2 1\nbad line\n"))


ops = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 5), st.booleans()), max_size=80)


@settings(max_examples=150, deadline=None)
@given(ops)
def test_rebuild_equivalence(seq):
    """Any add/delete history equals the table built from the surviving multiset."""
    tab = TransitionTable(debug=True)
    live = []
    for s, a, s2, want_delete in seq:
        t = T(s, a, 0.0, s2)
        if want_delete and t in live:
            live.remove(t)
            tab.delete(t)
        else:
            live.append(t)
            tab.add(t)
    assert tab == TransitionTable.from_transitions(reversed(live))
    for (s, a), succ in tab.successors.items():
        for s2 in succ:
            assert (s, a, succ[s2]) in tab.predecessors(s2)
