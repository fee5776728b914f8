import numpy as np
import pytest
from hypothesis import settings

from survquant import LongitudinalCohort

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_cohort(dead, treatment, covariates, outcome):
    dead = np.asarray(dead)
    return LongitudinalCohort(np.arange(dead.shape[0]), dead, treatment, covariates, outcome)


@pytest.fixture
def toy_point():
    """Six subjects, one decision; subjects 4 and 5 die."""
    dead = [[0, 0]] * 4 + [[0, 1]] * 2
    A = [1, 1, 0, 0, 1, 0]
    L = [[1], [0], [1], [0], [1], [0]]
    Y = [5.0, 3.0, 2.0, 4.0, np.nan, np.nan]
    return make_cohort(dead, np.array(A, float)[:, None], np.array(L, float)[:, :, None], Y)


@pytest.fixture
def toy_tv():
    """Two decisions: subject 0 survives, 1 dies in (0, 1], 2 dies in (1, 2], 3 survives off regimen."""
    nan = np.nan
    dead = [[0, 0, 0], [0, 1, 1], [0, 0, 1], [0, 0, 0]]
    A = [[1, 1], [1, nan], [1, 1], [1, 0]]
    L = [[0.5, 1.0], [0.2, nan], [0.1, 0.0], [0.9, 1.0]]
    Y = [2.0, nan, nan, 7.0]
    return make_cohort(dead, np.array(A), np.array(L)[:, :, None], Y)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list = []


def record(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
