from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture()
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; the lines are
    printed together at the end of the run."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
