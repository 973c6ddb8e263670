import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA: list[str] = []


def record(number: int, name: str, passed: bool, detail: str):
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    CRITERIA.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    return record
