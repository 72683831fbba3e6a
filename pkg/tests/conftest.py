import pytest

VERDICTS = []


@pytest.fixture
def verdict():
    """Record a criterion outcome; it is echoed at the end of the session."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
