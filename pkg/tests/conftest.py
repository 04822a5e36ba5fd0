import numpy as np
import pytest
from hypothesis import settings

from romsa.mesh import build_dg_space, rect_mesh, uniform_slab
from romsa.problem import AffineTerm, ProblemDefinition
from romsa.quadrature import chebyshev_legendre, gauss_legendre

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

# lines printed once at the end of the session by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def _step(x, at, left, right):
    return np.where(x < at, left, right)


def slab_problem(inflow_left=0.0):
    """Two-material slab on [0, 2] with a piecewise-linear source; mu = (scale_a, scale_s)."""
    return ProblemDefinition(
        "tiny_slab", "slab1d",
        sigma_a=lambda mu, x: mu[0] * _step(x, 1.0, 1.0, 0.2),
        sigma_s=lambda mu, x: mu[1] * _step(x, 1.0, 0.5, 3.0),
        source=lambda x: 1.0 + 0.5 * x,
        inflow={"left": inflow_left} if inflow_left else {},
        param_names=("a", "s"), param_ranges=((0.5, 2.0), (0.5, 2.0)),
        affine=(
            AffineTerm("abs", lambda mu: mu[0], sigma_a=lambda x: _step(x, 1.0, 1.0, 0.2)),
            AffineTerm("scat", lambda mu: mu[1], sigma_s=lambda x: _step(x, 1.0, 0.5, 3.0)),
        ),
    )


def square_problem(inflow_bottom=0.0):
    """Unit square with a scattering inclusion; mu = (scale_a, scale_s)."""

    def inner(x, y):
        return ((np.abs(x - 0.5) < 1.0 / 6.0) & (np.abs(y - 0.5) < 1.0 / 6.0)).astype(float)

    return ProblemDefinition(
        "tiny_square", "xy2d",
        sigma_a=lambda mu, x, y: mu[0] * (0.3 + 0.0 * x),
        sigma_s=lambda mu, x, y: mu[1] * (1.0 + 4.0 * inner(x, y)),
        source=lambda x, y: 1.0 + x - 0.5 * y,
        inflow={"bottom": inflow_bottom} if inflow_bottom else {},
        param_names=("a", "s"), param_ranges=((0.5, 2.0), (0.5, 2.0)),
        affine=(
            AffineTerm("abs", lambda mu: mu[0], sigma_a=lambda x, y: 0.3 + 0.0 * x),
            AffineTerm("scat", lambda mu: mu[1], sigma_s=lambda x, y: 1.0 + 4.0 * inner(x, y)),
        ),
    )


@pytest.fixture
def tiny_slab():
    """4 cells, 2 directions (S_2)."""
    mesh = uniform_slab(0.0, 2.0, 4)
    return slab_problem(), mesh, build_dg_space(mesh), gauss_legendre(2)


@pytest.fixture
def tiny_square():
    """3x3 cells, CL(4,2)."""
    mesh = rect_mesh(0.0, 1.0, 0.0, 1.0, 3, 3)
    return square_problem(), mesh, build_dg_space(mesh), chebyshev_legendre(4, 2)
