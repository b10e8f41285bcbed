"""Shared pytest plumbing.

test_acceptance appends one line per acceptance criterion to
ACCEPTANCE_LINES; the hook below echoes them in the terminal summary so the
pass/fail ledger is visible even without -s.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
