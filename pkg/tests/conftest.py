import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import three_bus_text  # noqa: E402

from epsfair.grid import parse_matpower_case  # noqa: E402

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def sym_case():
    return parse_matpower_case(three_bus_text(5, 5), "sym3")


@pytest.fixture
def asym_case():
    return parse_matpower_case(three_bus_text(6, 4), "asym3")


@pytest.fixture
def unequal_case():
    """Loads 6 and 3; removing line 1 isolates bus 2."""
    return parse_matpower_case(three_bus_text(5, 5, d2=6, d3=3), "unequal3")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
