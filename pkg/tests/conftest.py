from __future__ import annotations

import numpy as np
import pytest

from clusterbess.cell import CellParams, OcvCurve
from clusterbess.pack import Pack, PackState, table2_population


@pytest.fixture
def params() -> CellParams:
    return CellParams()


@pytest.fixture
def linear_params() -> CellParams:
    """Single-segment OCV 3.0 + 1.2 q."""
    return CellParams(ocv=OcvCurve.from_rows([(0.0, 1.0, 3.0, 1.2)]))


@pytest.fixture
def pack40() -> tuple[Pack, PackState]:
    return table2_population(40, seed=3)


def two_cell_pack(r_total=(0.030, 0.060), soc=(0.72, 0.72), temp=(300.0, 300.0), r_c=0.0):
    """Two cells with the given R + R_C and otherwise default parameters."""
    base = CellParams(converter_resistance=r_c)
    cells = [base.with_resistance(r - r_c) for r in r_total]
    return Pack.from_cells(cells), PackState(np.array(soc, float), np.array(temp, float))


ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the summary prints them all."""

    def record(name: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
