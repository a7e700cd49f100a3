"""Shared test plumbing.

Criterion verdict lines are collected here and echoed in the terminal
summary, which the output capture cannot swallow; a plain print inside a
passing test is discarded under the default fd capture.
"""

CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
