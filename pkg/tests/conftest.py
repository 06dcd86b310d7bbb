import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# (criterion number, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
