import pytest

_RESULTS: dict[int, tuple[str, str]] = {}
_DETAILS: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail(request):
    """Record a one-line summary for the acceptance report."""

    def record(text: str):
        _DETAILS[request.node.nodeid] = text

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    status = "PASS" if rep.passed else "FAIL"
    _RESULTS[mark.args[0]] = (status, _DETAILS.get(item.nodeid, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        status, text = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {text}")
