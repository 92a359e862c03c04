import numpy as np
import pytest

from stationary_bvp.grid import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return Grid(16, 8, r_min=1.0, r_max=8.0, stencil_order=4)


def refinement_pair(n_r=16, n_theta=8, order=4, r_min=1.0, r_max=8.0):
    g = Grid(n_r, n_theta, r_min=r_min, r_max=r_max, stencil_order=order)
    return g, g.refined()


def observed_order(e_coarse, e_fine):
    return float(np.log2(e_coarse / e_fine))


def expected_boundary_rows(gauge, eta):
    """Boundary symbol at xi = (i|eta|, eta1, eta2), columns h00 h01 h02 h11 h12 h22 v sigma.

    Written out by hand from the gauge, metric, mean-curvature and Neumann
    rows; ``gauge`` is "bianchi" or "divergence".
    """
    import sympy as sp

    e1, e2 = (sp.Rational(str(x)) for x in eta)
    n = sp.sqrt(e1**2 + e2**2)
    I, half = sp.I, sp.Rational(1, 2)
    rows = [
        [n, -I * e1, -I * e2, 0, 0, 0, 0, 0],
        [0, n, 0, -I * e1, -I * e2, 0, 0, 0],
        [0, 0, n, 0, -I * e1, -I * e2, 0, 0],
        [0, 0, 0, 1, 0, 0, -2, 0],
        [0, 0, 0, 0, 1, 0, 0, 0],
        [0, 0, 0, 0, 0, 1, -2, 0],
        [0, -I * e1, -I * e2, -half * n, 0, -half * n, 2 * n, 0],
        [0, 0, 0, 0, 0, 0, 0, -n],
    ]
    if gauge == "bianchi":
        # plus 1/2 i xi_j tr h, with xi_0 = i|eta|
        for j, xj in enumerate((I * n, e1, e2)):
            for k in (0, 3, 5):
                rows[j][k] += half * I * xj
    return sp.Matrix(rows)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
