import numpy as np
import pytest

from contentment.econ import ModelParams
from contentment.grid import Grid, PdfField, build_initial_condition


@pytest.fixture(scope="session")
def grid():
    return Grid()


@pytest.fixture(scope="session")
def small_grid():
    return Grid(m_max=12.0, n_m=48, n_c=24)


@pytest.fixture
def initial_field(grid):
    return build_initial_condition(grid, 1.0, 0.6, 0.5, 0.08, match_moments=True)


@pytest.fixture(scope="session")
def params():
    return ModelParams().resolved()


def bimodal_field(g: Grid) -> PdfField:
    m, c = g.m_centers[:, None], g.c_centers[None, :]
    v = (np.exp(-((m - 1.5) ** 2) / 0.3 - (c - 0.3) ** 2 / 0.02)
         + 0.6 * np.exp(-((m - 7.0) ** 2) / 1.5 - (c - 0.8) ** 2 / 0.05))
    return PdfField(g, v / (v.sum() * g.cell_area))


# acceptance verdicts, printed after the run by pytest_terminal_summary
ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
