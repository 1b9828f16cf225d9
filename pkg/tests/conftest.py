import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = f"criterion {number:>2} {name}: {'PASS' if passed else 'FAIL'}" + (
            f" ({detail})" if detail else "")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
