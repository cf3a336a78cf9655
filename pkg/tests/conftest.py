"""Shared pytest wiring: the acceptance summary block.

Acceptance tests push one line per criterion into ACCEPTANCE_LINES; the
terminal-summary hook prints them after the run, outside pytest's
per-test capture, so the pass/fail ledger is always visible.
"""

ACCEPTANCE_LINES = []


def record_criterion(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
