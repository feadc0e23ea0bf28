import pytest

from finagents.toolkit.registry import ToolContext
from helpers import RELEASE, toy_registry

# criterion number -> [title, all tests so far passed]
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, [title, True])
    entry[1] = entry[1] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:>2}. {title}")


@pytest.fixture
def ctx():
    return ToolContext("IBM", RELEASE)


@pytest.fixture
def registry():
    return toy_registry()
