"""Collects the acceptance PASS/FAIL lines and prints them after the run."""

ACCEPTANCE_LINES = []     # (criterion number, sub-label, line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
