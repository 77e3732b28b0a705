import pytest

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_RESULTS].append((number, line))
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(config.stash[_RESULTS])
    if rows:
        terminalreporter.section("acceptance criteria")
        for _, line in rows:
            terminalreporter.write_line(line)
