import numpy as np
import pytest
import sympy as sp

from stationary_bvp import _accel
from stationary_bvp.exact import oracle
from stationary_bvp.geometry import (MetricGeometry, adm_mass, boundary_geometry,
                                     christoffel_coordinate_frame, gauss_residual, weighted_norm)
from stationary_bvp.grid import Grid, GridError
from stationary_bvp.io import read_field, write_field
from stationary_bvp.systems import conformal
from stationary_bvp.tensors import DegenerateMetricError, ScalarField, SymTensor2, flat_metric

from conftest import observed_order, refinement_pair

X, Y, Z = sp.symbols("x y z", real=True)
RR = sp.sqrt(X**2 + Y**2 + Z**2)


def sympy_jet(expr, grid):
    """Value, gradient and Hessian of a Cartesian sympy expression on the nodes."""
    xs = (X, Y, Z)
    f = sp.lambdify(xs, expr, "numpy")
    d1 = [sp.lambdify(xs, sp.diff(expr, a), "numpy") for a in xs]
    d2 = [[sp.lambdify(xs, sp.diff(expr, a, b), "numpy") for b in xs] for a in xs]
    ev = lambda fn: np.broadcast_to(fn(*grid.x), grid.shape)
    return ev(f), np.array([ev(g) for g in d1]), np.array([[ev(g) for g in row] for row in d2])


def jet_errors(grid, expr):
    val, d1, d2 = sympy_jet(expr, grid)
    jet = grid.jet(val)
    return np.max(np.abs(jet.d1 - d1)), np.max(np.abs(jet.d2 - d2))


class TestGrid:
    """Construction rules and the finite-difference jet engine."""

    def test_invariants_rejected(self):
        with pytest.raises(GridError):
            Grid(8, 8, r_min=1.0, r_max=4.0)
        with pytest.raises(GridError):
            Grid(8, 8, r_min=0.5, r_max=8.0)
        with pytest.raises(GridError):
            Grid(8, 8, n_phi=4, mode="axi")
        with pytest.raises(GridError):
            Grid(8, 8, n_phi=5, mode="3d")

    def test_theta_nodes_avoid_axis(self, small_grid):
        th = small_grid.theta
        assert th.min() > 0 and th.max() < np.pi
        assert small_grid.shape == (17, 8, 1)

    @pytest.mark.parametrize("order", [2, 4])
    def test_axisymmetric_stencil_order(self, order):
        expr = Z / RR**3 + sp.exp(-RR / 4) * Z**2 / RR**2
        coarse, fine = refinement_pair(16, 8, order)
        e1c, e2c = jet_errors(coarse, expr)
        e1f, e2f = jet_errors(fine, expr)
        assert observed_order(e1c, e1f) >= order - 0.5
        assert observed_order(e2c, e2f) >= order - 0.5

    def test_full_3d_stencil_order(self):
        expr = X * Z / RR**3 + Y**2 / RR**3
        coarse = Grid(16, 8, 8, r_min=1, r_max=8, mode="3d", stencil_order=4)
        fine = coarse.refined()
        e1c, e2c = jet_errors(coarse, expr)
        e1f, e2f = jet_errors(fine, expr)
        assert observed_order(e1c, e1f) >= 3.5
        assert observed_order(e2c, e2f) >= 3.5

    def test_numba_and_numpy_kernels_agree(self, small_grid, rng):
        g = flat_metric(small_grid.shape) + 0.05 * np.einsum(
            "i...,j...->ij...", small_grid.normal, small_grid.normal)
        jet = small_grid.jet(g)
        n = int(np.prod(small_grid.shape))
        args = (np.linalg.inv(np.moveaxis(g, (0, 1), (-2, -1))).reshape(n, 3, 3).transpose(1, 2, 0).copy(),
                jet.d1.reshape(3, 3, 3, n).copy(), jet.d2.reshape(3, 3, 3, 3, n).copy())
        ref = _accel._christoffel_ricci_numpy(*args)
        fast = _accel.christoffel_ricci(*args)
        for a, b in zip(ref, fast):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


class TestCurvature:
    """Christoffel symbols, Ricci tensor and covariant operators."""

    def test_flat_cartesian(self, small_grid):
        geom = MetricGeometry(small_grid.jet(flat_metric(small_grid.shape)), small_grid)
        assert np.max(np.abs(geom.gam)) < 1e-12
        assert np.max(np.abs(geom.ric)) < 1e-12

    def test_flat_spherical_christoffel(self, small_grid):
        geom = MetricGeometry(small_grid.jet(flat_metric(small_grid.shape)), small_grid)
        gam = christoffel_coordinate_frame(small_grid, geom.gam)
        assert np.allclose(gam[0, 1, 1], -small_grid.R, atol=1e-10)

    def test_schwarzschild_christoffel(self):
        M = 0.1
        errs = []
        for grid in refinement_pair(16, 8, 4):
            p = oracle(grid, "schwarzschild", M)
            geom = MetricGeometry(grid.jet(p.g), grid)
            gam = christoffel_coordinate_frame(grid, geom.gam)
            exact = -grid.R * (1 - 2 * M / grid.R)
            errs.append(np.max(np.abs(gam[0, 1, 1] - exact) / grid.R))
        assert errs[1] < 1e-3
        assert observed_order(*errs) >= 3.5

    def test_product_metric_curvature(self):
        # cone dr^2 + a^2 r^2 dOmega^2 with a = 2: a unit tangent vector has
        # Ric = (1 - a^2) / (a r)^2, so the flat-unit e_theta gives -3 / r^2
        errs = []
        for grid in refinement_pair(16, 8, 4):
            n = grid.normal
            nn = np.einsum("i...,j...->ij...", n, n)
            g = nn + 4.0 * (flat_metric(grid.shape) - nn)
            geom = MetricGeometry(grid.jet(g), grid)
            e = grid.e_theta
            ric_tt = np.einsum("ij...,i...,j...->...", geom.ric, e, e)
            errs.append(np.max(np.abs(ric_tt + 3.0 / grid.R**2)))
        assert errs[1] < 2e-3
        assert observed_order(*errs) >= 3.5

    def test_conformal_schwarzschild_ricci(self):
        M = 0.1
        errs = []
        for grid in refinement_pair(16, 8, 4):
            c = conformal(oracle(grid, "schwarzschild", M)).fd_copy()
            geom = MetricGeometry(c.jet("g"), grid)
            du = c.jet("u").d1
            errs.append(np.max(np.abs(geom.ric - 2 * np.einsum("i...,j...->ij...", du, du))))
        assert observed_order(*errs) >= 3.5

    def test_harmonic_inverse_r(self):
        errs = []
        for grid in refinement_pair(16, 8, 4):
            geom = MetricGeometry(grid.jet(flat_metric(grid.shape)), grid)
            errs.append(np.max(np.abs(geom.laplacian(grid.jet(1.0 / grid.R)))))
        assert observed_order(*errs) >= 3.5

    def test_killing_rotation(self):
        errs = []
        for grid in refinement_pair(16, 8, 4):
            geom = MetricGeometry(grid.jet(flat_metric(grid.shape)), grid)
            x = grid.x
            jet = grid.jet(np.array([-x[1], x[0], 0 * x[0]]))
            errs.append(np.max(np.abs(geom.delta_star(jet.val, jet.d1))))
        assert errs[1] < 1e-5
        assert observed_order(*errs) >= 3.5

    def test_divergence_of_scaled_metric(self):
        # delta(f g) = -df because g is parallel
        errs = []
        for grid in refinement_pair(16, 8, 4):
            g = conformal(oracle(grid, "schwarzschild", 0.1)).fd_copy().g
            geom = MetricGeometry(grid.jet(g), grid)
            f = np.exp(-grid.R / 5) * np.cos(grid.TH)
            hjet = grid.jet(f * g)
            errs.append(np.max(np.abs(geom.div_sym(hjet.val, hjet.d1) + grid.jet(f).d1)))
        assert observed_order(*errs) >= 3.5

    def test_degenerate_metric_names_node(self, small_grid):
        g = flat_metric(small_grid.shape)
        g[2, 2, 3, 2, 0] = -1.0
        with pytest.raises(DegenerateMetricError, match="node"):
            MetricGeometry(small_grid.jet(g), small_grid)


class TestBoundaryGeometry:
    """Normal, second fundamental form and mean curvature of the inner sphere."""

    def test_flat_sphere(self):
        grid = Grid(16, 8, r_min=2.0, r_max=16.0, stencil_order=4)
        b = boundary_geometry(grid, grid.jet(flat_metric(grid.shape)))
        assert np.allclose(b.H, 1.0, atol=1e-12)
        assert np.allclose(b.A_frame, np.array([0.5, 0.0, 0.5])[:, None, None], atol=1e-12)

    def test_schwarzschild_mean_curvature(self):
        grid = Grid(16, 8, r_min=1.5, r_max=12.0, stencil_order=4)
        M = 0.2
        p = oracle(grid, "schwarzschild", M)
        b = boundary_geometry(grid, p.jet("g"))
        assert np.allclose(b.H, 2 / 1.5 * np.sqrt(1 - 2 * M / 1.5), rtol=1e-12)

    def test_constant_conformal_scaling(self, small_grid):
        g = conformal(oracle(small_grid, "schwarzschild", 0.1)).g
        c = 0.3
        H0 = boundary_geometry(small_grid, small_grid.jet(g)).H
        H1 = boundary_geometry(small_grid, small_grid.jet(np.exp(2 * c) * g)).H
        assert np.allclose(H1, np.exp(-c) * H0, rtol=1e-12)

    def test_unit_normal(self, small_grid):
        g = conformal(oracle(small_grid, "kerr", 0.1, 0.05)).g
        b = boundary_geometry(small_grid, small_grid.jet(g))
        norm = np.einsum("ij...,i...,j...->...", g[:, :, 0], b.nu, b.nu)
        assert np.allclose(norm, 1.0, atol=1e-13)
        tang = np.einsum("ij...,i...,j...->...", g[:, :, 0], b.nu, small_grid.e_theta[:, 0])
        assert np.max(np.abs(tang)) < 1e-13

    def test_gauss_equation(self):
        errs = []
        for grid in refinement_pair(16, 8, 4):
            p = oracle(grid, "schwarzschild", 0.1)
            errs.append(np.max(np.abs(gauss_residual(grid, grid.jet(p.g)))))
        assert errs[1] < 1e-3
        assert observed_order(*errs) >= 3.5


class TestNormsAndMass:
    """Weighted sup norms and the ADM mass."""

    def test_weighted_norm_inverse_r(self, small_grid):
        assert weighted_norm(small_grid, 1.0 / small_grid.R, 0, 0.5) == pytest.approx(1.0)

    def test_weighted_norm_power(self):
        for r_max in (8.0, 32.0):
            grid = Grid(16, 8, r_min=1, r_max=r_max)
            assert weighted_norm(grid, grid.R ** -0.5, 0, 0.5) == pytest.approx(1.0)

    def test_weighted_norm_zero(self, small_grid):
        assert weighted_norm(small_grid, np.zeros(small_grid.shape), 2) == 0.0

    def test_adm_mass_flat(self, small_grid):
        assert abs(adm_mass(small_grid, small_grid.jet(flat_metric(small_grid.shape)))) < 1e-12

    def test_adm_mass_schwarzschild(self):
        grid = Grid(64, 8, r_min=1, r_max=128, stencil_order=4)
        M = 0.1
        m = adm_mass(grid, oracle(grid, "schwarzschild", M).jet("g"), r_extract=64)
        assert abs(m - M) / M < 0.02


class TestFieldIO:
    """CSV + sidecar round trip."""

    def test_bit_exact_roundtrip(self, tmp_path, small_grid, rng):
        vals = rng.standard_normal(small_grid.shape) / 3
        write_field(tmp_path / "f.csv", ScalarField(small_grid, vals))
        back = read_field(tmp_path / "f.csv")
        assert np.array_equal(back.values, vals)
        g = SymTensor2.from_full(small_grid, flat_metric(small_grid.shape) * (1 + 0.1 * vals), is_metric=True)
        write_field(tmp_path / "g.csv", g)
        back = read_field(tmp_path / "g.csv")
        assert np.array_equal(back.packed, g.packed)
        assert back.grid.metadata() == small_grid.metadata()
