import pytest

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def record():
    """Store one acceptance verdict: ``record(number, passed, detail)``."""

    def _record(number, passed, detail):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
