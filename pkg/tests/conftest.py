import sys


def pytest_terminal_summary(terminalreporter):
    """Re-emit the acceptance criterion pass/fail lines after the run."""
    for name in ("tests.test_acceptance", "test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "REPORT_LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.REPORT_LINES:
                terminalreporter.write_line(line)
            break
