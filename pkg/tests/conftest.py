import pytest

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def record_criterion():
    """Collect one pass/fail line per acceptance criterion; the lines are
    echoed in the terminal summary so they survive output capture."""

    def rec(name, ok, detail):
        ACCEPTANCE_LINES.append(
            f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return rec


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
