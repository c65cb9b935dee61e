import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def report(number, passed, detail, reported_only=False):
        status = "REPORT" if reported_only else ("PASS" if passed else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
