import numpy as np
import pytest

from singrobin.mesh import build_box_mesh
from singrobin.oracle import path3

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict = {}


@pytest.fixture
def square1():
    return build_box_mesh(2, (0, 0), (1, 1), 1)


@pytest.fixture
def square8():
    return build_box_mesh(2, (0, 0), (1, 1), 8)


@pytest.fixture
def cube2():
    return build_box_mesh(3, (0, 0, 0), (1, 1, 1), 2)


@pytest.fixture
def path():
    return path3()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
