import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of a numbered acceptance criterion.

    Call ``criterion(k, ok, detail)``; the terminal summary prints one line
    per recorded criterion, in order.
    """
    results = request.config.stash[_RESULTS]

    def record(k, ok, detail=""):
        results[k] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
