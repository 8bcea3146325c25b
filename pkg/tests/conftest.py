import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def acceptance_line():
    """Record one PASS/FAIL/SKIP line per acceptance criterion."""

    def record(criterion: str, passed: bool | None, detail: str = "") -> None:
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _ACCEPTANCE.append((criterion, status, detail))
        print(f"[{status}] {criterion}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {criterion}: {detail}")
