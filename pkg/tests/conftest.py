import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still asserts on its own."""
    def record(criterion: int, passed: bool, detail: str):
        _VERDICTS.append((criterion, passed, detail))
        print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
