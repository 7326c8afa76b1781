"""Shared pytest hooks.

The acceptance suite records one verdict per criterion in
``ACCEPTANCE_RESULTS``; the terminal summary prints them as PASS/FAIL lines
so they survive output capture.
"""

ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
