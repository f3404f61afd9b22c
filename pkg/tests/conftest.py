from pathlib import Path

import pytest

from mad_compress.backend import MockBackend, MockScript
from mad_compress.debate import AgentResponse, DebateState, Query, advance_round

FIXTURES = Path(__file__).parent / "fixtures"


def build_state(rounds: list[list[str]]) -> DebateState:
    K = len(rounds[0]) if rounds else 1
    state = DebateState.initial(K)
    for r, texts in enumerate(rounds, start=1):
        state = advance_round(state, [AgentResponse(i, r, t, len(t.split())) for i, t in enumerate(texts, 1)])
    return state


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def query() -> Query:
    return Query("q1", "What is 2 + 2?", "4")


@pytest.fixture
def round_one() -> DebateState:
    return build_state([["2 + 2 = 4, so \\boxed{4}", "2 + 2 = 4, so \\boxed{4}", "2 + 2 = 5, so \\boxed{5}"]])


@pytest.fixture
def mock_backend() -> MockBackend:
    return MockBackend(MockScript())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
