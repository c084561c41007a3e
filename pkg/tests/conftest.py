from __future__ import annotations

import pytest

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; returns the verdict."""
    def report(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[criterion] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[key])
