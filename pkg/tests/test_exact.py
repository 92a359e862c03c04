import numpy as np
import pytest

from stationary_bvp.exact import OracleDomainError, OracleSpec, kerr, minkowski, oracle, schwarzschild
from stationary_bvp.geometry import frame_components
from stationary_bvp.grid import Grid
from stationary_bvp.tensors import flat_metric


@pytest.fixture(scope="module")
def grid():
    return Grid(16, 8, r_min=1.0, r_max=8.0, stencil_order=4)


def tangential(grid, g):
    return frame_components(g, grid.e_theta, grid.e_phi)


class TestFamilies:
    """Closed-form values of the oracle families."""

    def test_minkowski(self, grid):
        p = minkowski(grid)
        assert np.array_equal(p.g, flat_metric(grid.shape)) and not np.any(p.u) and not np.any(p.psi)

    def test_zero_mass_is_minkowski(self, grid):
        for p in (schwarzschild(grid, 0.0), kerr(grid, 0.0, 0.0), oracle(grid, "kerr")):
            assert np.array_equal(p.g, flat_metric(grid.shape)) and not np.any(p.u)

    def test_schwarzschild_lapse_and_sphere(self, grid):
        M = 0.1
        p = schwarzschild(grid, M)
        assert np.allclose(p.u, 0.5 * np.log(1 - 2 * M / grid.R), atol=1e-14)
        gT = tangential(grid, p.g)
        # spatial Schwarzschild metric: round spheres of radius r, g_rr = 1 / (1 - 2M/r)
        assert np.allclose(gT[0], 1.0, atol=1e-14)
        assert np.allclose(gT[1], 0.0, atol=1e-14) and np.allclose(gT[2], 1.0, atol=1e-14)
        g_rr = np.einsum("ij...,i...,j...->...", p.g, grid.normal, grid.normal)
        assert np.allclose(g_rr, 1 / (1 - 2 * M / grid.R), atol=1e-14)

    def test_kerr_without_spin_is_schwarzschild(self, grid):
        k, s = kerr(grid, 0.1, 0.0), schwarzschild(grid, 0.1)
        assert np.allclose(k.g, s.g, atol=1e-14) and np.allclose(k.u, s.u, atol=1e-14)
        assert not np.any(k.psi)

    def test_kerr_lapse_and_polar_component(self, grid):
        M, a = 0.1, 0.05
        p = kerr(grid, M, a)
        sig = grid.R**2 + a**2 * np.cos(grid.TH) ** 2
        assert np.allclose(np.exp(2 * p.u), 1 - 2 * M * grid.R / sig, atol=1e-14)
        assert np.allclose(tangential(grid, p.g)[0], sig / grid.R**2, atol=1e-14)

    def test_kerr_potential_is_odd_under_reflection(self, grid):
        psi = kerr(grid, 0.1, 0.05, psi="closed-form").psi
        assert np.allclose(psi, -psi[:, ::-1], atol=1e-14)
        assert np.max(np.abs(psi)) > 0


class TestDomain:
    """Rejection of invalid parameters and regions."""

    def test_horizon_too_close(self):
        with pytest.raises(OracleDomainError, match="horizon"):
            schwarzschild(Grid(8, 4, r_min=1.0, r_max=8.0), 0.5)

    def test_ergoregion(self):
        with pytest.raises(OracleDomainError, match="ergoregion"):
            kerr(Grid(8, 4, r_min=1.0, r_max=8.0), 0.9, 0.8)

    @pytest.mark.parametrize("kwargs", [dict(family="taub-nut"), dict(family="kerr", M=0.1, a=0.2),
                                        dict(family="schwarzschild", M=-1.0)])
    def test_bad_spec(self, kwargs):
        with pytest.raises(ValueError):
            OracleSpec(**kwargs)

    def test_unknown_psi_method(self, grid):
        with pytest.raises(ValueError):
            kerr(grid, 0.1, 0.05, psi="guess")
