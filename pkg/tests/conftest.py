"""Shared test plumbing.

Acceptance tests record a one-line verdict each; the recorder echoes
them immediately and replays them in the terminal summary so the
pass/fail lines survive pytest's output capture.
"""

from __future__ import annotations

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
