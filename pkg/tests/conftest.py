import checks


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance scorecard after the test summary so the
    per-check lines are visible without -s."""
    if checks.scorecard:
        terminalreporter.section("acceptance scorecard")
        for line in checks.scorecard:
            terminalreporter.write_line(line)
