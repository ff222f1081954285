"""Shared pytest wiring: collects the acceptance-criterion verdicts and
prints one PASS/FAIL line per criterion in the terminal summary."""
from __future__ import annotations

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_criterion(number: int, passed: bool) -> str:
    line = f"ACCEPTANCE criterion {number} {'PASS' if passed else 'FAIL'}"
    ACCEPTANCE_RESULTS[number] = line
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria", sep="-")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
