import pytest

# nodeid -> (criterion number, passed, detail) for tests marked ``criterion``
VERDICTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): numbered acceptance criterion checked by the test")


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for the acceptance summary, then assert it."""
    def record(ok, detail):
        n = request.node.get_closest_marker("criterion").args[0]
        VERDICTS[request.node.nodeid] = (n, bool(ok), detail)
        assert ok, detail
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" or item.nodeid in VERDICTS:
        return
    detail = "no verdict recorded" if call.excinfo is None else f"error: {call.excinfo.value!r}"
    VERDICTS[item.nodeid] = (mark.args[0], False, detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(VERDICTS.values(), key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
