"""Collects the per-criterion verdict lines from the acceptance tests and
prints them in the terminal summary, where they survive output capture."""

CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
