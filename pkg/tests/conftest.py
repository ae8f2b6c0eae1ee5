import numpy as np
import pytest

from relboltz.collision import AngularQuadrature
from relboltz.kernels import CrossSectionModel, TruncationParams
from relboltz.phase_space import MomentumLattice, SpatialGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def hard_sphere():
    return CrossSectionModel.constant(1.0)


@pytest.fixture
def small_lattice():
    return MomentumLattice(4.0, 8)


@pytest.fixture
def homogeneous():
    return SpatialGrid()


@pytest.fixture
def coarse_quad():
    return AngularQuadrature(8, 8)


@pytest.fixture
def trunc8():
    return TruncationParams(8)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    def record(label, passed, detail):
        ACCEPTANCE_LINES[label] = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[label])
