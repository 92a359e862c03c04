import itertools
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp
from sympy import QQ_I

from stationary_bvp import symbols as sy

from conftest import expected_boundary_rows

ETAS = [(1, 0), (0, 1), (Fraction(3, 5), Fraction(4, 5))]
z, s = sp.symbols("z s")


def as_expr(poly):
    return sp.expand(sy.ZS.to_sympy(poly.value))


def l2_numeric(xi):
    """Gauge-fixed interior symbol built from tensor formulas on packed (h, v, sigma)."""
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    xi = np.asarray(xi, dtype=float)
    n2 = xi @ xi
    out = np.zeros((8, 8))
    for col, (a, b) in enumerate(pairs):
        h = np.zeros((3, 3))
        h[a, b] = h[b, a] = 1.0
        tr = np.trace(h)
        img = n2 * h + np.outer(xi, xi) * tr + (xi @ h @ xi - n2 * tr) * np.eye(3)
        out[:6, col] = [img[p] for p in pairs]
    out[6, 6] = 8 * n2
    out[7, 7] = 8 * n2
    return out


class TestInteriorSymbol:
    """Determinants, roots and the adjugate of the interior symbols."""

    def test_bianchi_determinant(self):
        L, _ = sy.builtin_symbols("P1", (1, 0))
        assert sp.expand(as_expr(sy.det_symbol(L)) - 64 * s * (z**2 + 1) ** 8) == 0

    @pytest.mark.parametrize("eta", ETAS)
    def test_roots_and_l_plus(self, eta):
        L, _ = sy.builtin_symbols("P1", eta)
        ok, roots = sy.properly_elliptic(L)
        norm = sp.Rational(str(sy.rational_norm(eta)))
        assert ok and dict(roots) == {sp.I * norm: 8, -sp.I * norm: 8}
        assert sp.expand(as_expr(sy.l_plus(roots)) - (z - sp.I * norm) ** 8) == 0

    def test_adjugate_identity(self):
        L, _ = sy.builtin_symbols("P2", (Fraction(3, 5), Fraction(4, 5)))
        prod = (L @ sy.adjugate(L)).to_sympy()
        det = sy.ZS.to_sympy(sy.det_symbol(L).value)
        assert sp.simplify(prod - det * sp.eye(8)) == sp.zeros(8)

    def test_homogeneity(self):
        spec = sy.builtin_spec("P2")
        assert spec.interior_orders == [2] * 8
        assert spec.boundary_orders == [1, 1, 1, 0, 0, 0, 1, 1]
        L, _ = sy.builtin_symbols("P2", (1, 0))
        L3, _ = sy.builtin_symbols("P2", (3, 0))
        d1 = as_expr(sy.det_symbol(L)).subs(z, 2)
        d3 = as_expr(sy.det_symbol(L3)).subs(z, 6)
        assert sp.expand(d3 - 3**16 * d1) == 0

    @pytest.mark.parametrize("xi", [(0.3, 1.0, 0.0), (1.7, -0.4, 0.9), (-0.2, 0.5, 2.0)])
    def test_divergence_symbol_matches_tensor_formula(self, xi):
        eta = tuple(Fraction(x).limit_denominator(100) for x in xi[1:])
        L, _ = sy.builtin_symbols("P2", eta)
        exact = np.array(L.to_sympy().subs({z: sp.Rational(str(xi[0])), s: 1}).evalf(), dtype=complex)
        assert np.allclose(exact.real, l2_numeric((xi[0],) + tuple(float(e) for e in eta)), atol=1e-12)
        assert np.allclose(exact.imag, 0.0)
        assert np.isclose(np.linalg.det(exact.real), np.linalg.det(l2_numeric((xi[0],) + tuple(map(float, eta)))))

    def test_divergence_symbol_numeric_roots(self):
        L, _ = sy.builtin_symbols("P2", (1, 0))
        coeffs = sp.Poly(as_expr(sy.det_symbol(L)).subs(s, 1), z).all_coeffs()
        roots = np.roots([complex(c) for c in coeffs])
        # an 8-fold root splits by about eps**(1/8) in floating point
        assert np.allclose(roots, np.where(roots.imag > 0, 1j, -1j), atol=0.05)
        assert np.sum(roots.imag > 0) == 8

    def test_wave_symbol_not_elliptic(self):
        spec = sy.BVPSpec("wave", ["f"], [[sy.XI0**2 - sy.XI1**2]], [[sy.XI_RING.one]])
        L, _ = spec.symbols((1, 0))
        ok, roots = sy.properly_elliptic(L)
        assert not ok and dict(roots) == {-1: 1, 1: 1}

    def test_identity_symbol(self):
        L = sy.identity_symbol(3)
        assert sy.det_symbol(L) == 1
        assert sy.adjugate(L) == L


class TestBoundarySymbol:
    """Boundary rows at the upper root against hand-written tables."""

    @pytest.mark.parametrize("which,gauge", [("P1", "bianchi"), ("Phat", "divergence"), ("P2", "divergence")])
    @pytest.mark.parametrize("eta", ETAS)
    def test_rows_at_root(self, which, gauge, eta):
        _, B = sy.builtin_symbols(which, eta)
        got = sy.boundary_rows_at_root(B, eta).to_Matrix()
        assert sp.simplify(got - expected_boundary_rows(gauge, eta)) == sp.zeros(8, 8)

    def test_gauges_differ_by_trace_terms(self):
        _, B1 = sy.builtin_symbols("P1", (1, 0))
        _, B2 = sy.builtin_symbols("Phat", (1, 0))
        diff = (B1.to_sympy() - B2.to_sympy())
        assert diff[3:, :] == sp.zeros(5, 8)
        for j, xj in enumerate((z, 1, 0)):
            for k in range(8):
                want = sp.I * xj / 2 if k in (0, 3, 5) else 0
                assert sp.expand(diff[j, k] - want) == 0

    def test_irrational_norm_rejected(self):
        with pytest.raises(sy.SymbolError, match="Pythagorean"):
            sy.rational_norm((1, 1))


class TestVerdicts:
    """Complementing and specialised verdicts on the builtin systems."""

    @pytest.mark.parametrize("which", sy.BUILTINS)
    def test_builtins_complementing(self, which):
        v = sy.check_spec(sy.builtin_spec(which), ETAS)
        for rec in v.samples:
            assert rec["properly_elliptic"] and rec["complementing"]
            assert rec["specialized_nondegeneracy"] is True
        assert sy.verdicts_agree(v)

    def test_duplicated_row_fails_with_nullspace(self):
        spec = sy.duplicated_row_control("P1")
        L, B = spec.symbols((1, 0))
        v = sy.complementing_check(L, B)
        assert v.properly_elliptic and v.complementing is False
        assert len(v.nullspace) == 1
        vec = [sp.sympify(x) for x in v.nullspace[0]]
        assert all(x == 0 for x in vec[:6]) and vec[6] != 0 and sp.simplify(vec[6] + vec[7]) == 0
        assert sy.specialized_nondegeneracy(L, B, (1, 0)) is False

    def test_laplace_dirichlet(self):
        spec = sy.BVPSpec("laplace", ["f"], [[sy.XI0**2 + sy.XI1**2 + sy.XI2**2]], [[sy.XI_RING.one]])
        v = sy.check_spec(spec, ETAS)
        assert v.complementing and v.l_plus == "z - I"

    def test_row_count_mismatch(self):
        spec = sy.BVPSpec("laplace", ["f"], [[sy.XI0**2 + sy.XI1**2 + sy.XI2**2]], [])
        L, B = spec.symbols((1, 0))
        with pytest.raises(sy.SymbolError, match="boundary rows"):
            sy.complementing_check(L, B)

    def test_unknown_guard(self):
        names = [f"u{k}" for k in range(sy.MAX_UNKNOWNS + 1)]
        row = [sy.XI0] * len(names)
        with pytest.raises(sy.SymbolError, match="exceed"):
            sy.BVPSpec("big", names, [row], [])

    def test_mixed_orders_rejected(self):
        with pytest.raises(sy.SymbolError, match="mixes orders"):
            sy.BVPSpec("bad", ["a", "b"], [[sy.XI0**2, sy.XI1]], [])
