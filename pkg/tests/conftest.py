import pytest

_LINES = []


@pytest.fixture
def report_line():
    """Record a criterion verdict line for the end-of-run summary."""
    return _LINES.append


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
