from pathlib import Path

import pytest

from trace_exit import SessionConfig
from trace_exit.drivers import ReplayDriver, ReplayTrace

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def fig11() -> ReplayTrace:
    return ReplayTrace.load(FIXTURES / "fig11.jsonl")


@pytest.fixture
def stable_early() -> ReplayTrace:
    return ReplayTrace.load(FIXTURES / "stable_early.jsonl")


@pytest.fixture
def config() -> SessionConfig:
    return SessionConfig()


def replay(trace: ReplayTrace) -> ReplayDriver:
    return ReplayDriver(trace)


@pytest.fixture(scope="session")
def engineered():
    from trace_exit.harness import ProblemSet

    return ProblemSet.load(FIXTURES / "set.jsonl")


ACCEPTANCE_RESULTS: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for one acceptance criterion."""
    state = {"n": None, "title": ""}

    def declare(n: int, title: str) -> None:
        state["n"], state["title"] = n, title

    yield declare
    if state["n"] is None:
        return
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    line = f"criterion {state['n']}: {'PASS' if ok else 'FAIL'} - {state['title']}"
    ACCEPTANCE_RESULTS[state["n"]] = line
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
