import numpy as np
import pytest

from ladselect.data import ModelMeta

ACCEPTANCE_LINES: list[str] = []

# sparse-normal population quantities, written out by hand from theta0 = (1, 1, .5, .5, .4, 0)
SPARSE_KL = (0.705, 0.33, 0.25, 0.205, 0.205, 0.0, 0.0)
SPARSE_COMPLEXITY = (2.0, 2.0, 3.0, 3.0, 3.0, 5.0, 6.0)


@pytest.fixture
def sparse_meta():
    return ModelMeta(SPARSE_COMPLEXITY, (2, 2, 3, 3, 3, 5, 6), tuple(f"M{k}" for k in range(1, 8)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
