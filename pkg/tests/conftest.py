import numpy as np
import pytest

from pullback_fsi.discretization import assemble_operators, build_grid
from pullback_fsi.galerkin import assemble_couplings
from pullback_fsi.plate_basis import solve_plate_eigen
from pullback_fsi.stokes_basis import build_lifting, solve_stokes_eigen

# filled by tests/test_acceptance.py, echoed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def ops12():
    return assemble_operators(build_grid(12, 12))


@pytest.fixture(scope="session")
def ops16():
    return assemble_operators(build_grid(16, 16))


@pytest.fixture(scope="session")
def stokes12(ops12):
    return solve_stokes_eigen(ops12, 10)


@pytest.fixture(scope="session")
def plate12(ops12):
    return solve_plate_eigen(ops12, 8)


@pytest.fixture(scope="session")
def lift12(ops12):
    return build_lifting(ops12)


@pytest.fixture(scope="session")
def coup12(ops12):
    """Small coupled system, m = n = 6."""
    return assemble_couplings(solve_stokes_eigen(ops12, 6), solve_plate_eigen(ops12, 6), build_lifting(ops12), ops12)


@pytest.fixture(scope="session")
def coup16(ops16):
    return assemble_couplings(solve_stokes_eigen(ops16, 8), solve_plate_eigen(ops16, 8), build_lifting(ops16), ops16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
