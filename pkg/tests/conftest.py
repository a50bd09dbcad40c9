import pytest

ACCEPTANCE_LINES = []


def record(label, ok, detail=""):
    """Log one acceptance line; shown in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} {label}" + (f" | {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
