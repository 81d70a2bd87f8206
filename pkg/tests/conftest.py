import numpy as np
import pytest

from sponet.fespace import build_space
from sponet.mesh import unit_square_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def space(n, degree=1):
    return build_space(unit_square_mesh(n), degree)


CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
