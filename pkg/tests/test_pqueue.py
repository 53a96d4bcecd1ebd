import pytest
from hypothesis import given, strategies as st

from statetab.pqueue import PriorityQueue


def test_pop_order_and_update():
    pq = PriorityQueue()
    pq.push(1, 0.5)
    pq.push(2, 2.0)
    pq.push(3, 1.0)
    pq.push(2, 0.1)   # lowered priority replaces the old entry
    assert len(pq) == 3
    assert [pq.pop()[0] for _ in range(3)] == [3, 1, 2]
    assert not pq


def test_ties_pop_in_insertion_order():
    pq = PriorityQueue()
    for s in (5, 3, 9):
        pq.push(s, 1.0)
    assert [pq.pop()[0] for _ in range(3)] == [5, 3, 9]


def test_discard_and_empty_pop():
    pq = PriorityQueue()
    pq.push(1, 1.0)
    pq.discard(1)
    pq.discard(42)
    assert 1 not in pq and pq.priority(1) is None
    with pytest.raises(IndexError):
        pq.pop()


@given(st.lists(st.tuples(st.integers(0, 20), st.floats(0, 10), st.booleans()), max_size=300))
def test_matches_dict_model(ops):
    pq = PriorityQueue()
    model = {}
    for s, p, drop in ops:
        if drop:
            pq.discard(s)
            model.pop(s, None)
        else:
            pq.push(s, p)
            model[s] = p
    assert len(pq) == len(model)
    popped = []
    while pq:
        s, p = pq.pop()
        assert model.pop(s) == p
        popped.append(p)
    assert popped == sorted(popped, reverse=True)
