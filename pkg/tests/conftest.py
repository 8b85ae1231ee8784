import numpy as np
import pytest

from citevec.graph import ingest_edges


@pytest.fixture
def path3():
    """Path 1-2-3 (1 cites 2, 2 cites 3)."""
    return ingest_edges([("1", "2"), ("2", "3")])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------

_criteria: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = mark.args
    _, outcomes = _criteria.setdefault(n, (title, []))
    outcomes.append("passed" if rep.passed and rep.when == "call" else rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, outcomes = _criteria[n]
        ok = outcomes and all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}")
