import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polaron_lab.pekar import solve_pekar  # noqa: E402
from polaron_lab.radial import RadialGrid  # noqa: E402


@pytest.fixture(scope="session")
def pekar_solution():
    return solve_pekar(RadialGrid(20.0, 2000))


ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Print and keep one pass/fail line per acceptance criterion."""
    def _record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
