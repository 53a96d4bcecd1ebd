import random

import pytest

from statetab.tabular_model import TransitionRecord as T

A, B, C, D = 0xA, 0xB, 0xC, 0xD


@pytest.fixture
def rng():
    return random.Random(1234)


def random_multiset(rng, n_states=8, n_actions=3, n=40):
    codes = rng.sample(range(1 << 10), n_states)
    return [T(rng.choice(codes), rng.randrange(n_actions), round(rng.uniform(-1, 1), 3), rng.choice(codes))
            for _ in range(n)]


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
