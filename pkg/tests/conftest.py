"""Collects the one-line verdicts printed by the acceptance suite."""

import pytest

VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """``verdict(name, ok, detail)`` records and prints one pass/fail line."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" -- {detail}" if detail else "")
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
