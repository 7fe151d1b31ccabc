import numpy as np
import pytest

from fracsem.basis import ElementSpace
from fracsem.mesh import make_graded_mesh, make_uniform_mesh
from fracsem.problem import FractionalProblem, example_power_solution


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def power_problem():
    return example_power_solution()


@pytest.fixture(scope="session")
def small_graded_space():
    return ElementSpace.uniform(make_graded_mesh(0.0, 10.0, 24, 5.0), 3)


@pytest.fixture(scope="session")
def small_uniform_space():
    return ElementSpace.uniform(make_uniform_mesh(0.0, 1.0, 16), 3)


@pytest.fixture(scope="session")
def plain_problem():
    return FractionalProblem(alpha=1.6, a=0.0, b=10.0)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Records one pass/fail line per acceptance criterion."""

    def record(name, ok, detail):
        _ACCEPTANCE[name] = (bool(ok), detail)
        print(f"{name} {'PASS' if ok else 'FAIL'} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s[2:])):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'} {detail}")
