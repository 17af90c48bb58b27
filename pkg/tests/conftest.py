"""Shared pytest hooks.

Acceptance tests register a one-line verdict per criterion in ``VERDICTS``;
the terminal summary prints them in order after the run.
"""

VERDICTS = {}


def record(number, passed, detail):
    VERDICTS[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        passed, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): acceptance criterion number n")
