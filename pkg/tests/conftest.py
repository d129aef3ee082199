import os

# One line per acceptance criterion, filled in by test_acceptance.py.
CRITERIA = {}


def record(number, passed, detail):
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
