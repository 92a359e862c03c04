import pytest

from stationary_bvp import symbols as sy
from stationary_bvp.dsl import SpecSyntaxError, format_bvp_spec, format_polynomial, parse_bvp_spec, parse_polynomial

LAPLACE = """\
# scalar Laplacian with a Dirichlet row
system laplace
unknowns: f
interior:
row: xi0^2 + xi1^2 + xi2^2
boundary:
row: 1
"""


class TestParse:
    """Parsing spec text into validated systems."""

    def test_laplace(self):
        spec = parse_bvp_spec(LAPLACE)
        assert spec.unknowns == ("f",)
        assert spec.interior == [[sy.XI0**2 + sy.XI1**2 + sy.XI2**2]]
        assert spec.boundary == [[sy.XI_RING.one]]
        assert spec.interior_orders == [2] and spec.boundary_orders == [0]

    def test_laplace_verdict(self):
        v = sy.check_spec(parse_bvp_spec(LAPLACE), [(1, 0), (0, 1)])
        assert v.properly_elliptic and v.complementing

    def test_polynomial_arithmetic(self):
        p = parse_polynomial("(xi0 + i*xi1)^2 - 1/2*s*xi2^2")
        want = (sy.XI0 + sy.XI_RING(sy.QQ_I(0, 1)) * sy.XI1) ** 2 - sy.XI_RING(sy.QQ_I(sy.sp.Rational(1, 2))) * sy.S_XI * sy.XI2**2
        assert p == want

    @pytest.mark.parametrize("which", sy.BUILTINS)
    def test_builtin_round_trip(self, which):
        text = format_bvp_spec(sy.builtin_spec(which))
        again = parse_bvp_spec(text)
        assert format_bvp_spec(again) == text
        assert again.interior == sy.builtin_spec(which).interior
        assert again.boundary == sy.builtin_spec(which).boundary

    def test_format_polynomial_canonical(self):
        assert format_polynomial(parse_polynomial("xi1 - 2*xi0")) == "-2*xi0 + xi1"
        assert format_polynomial(parse_polynomial("0")) == "0"


class TestErrors:
    """Diagnostics carry a line and column."""

    def test_mixed_orders(self):
        text = LAPLACE.replace("row: 1", "row: xi0 + 1")
        with pytest.raises(SpecSyntaxError) as err:
            parse_bvp_spec(text)
        assert err.value.line == 7 and "boundary row 1" in str(err.value)

    def test_mixed_row_orders(self):
        text = "system two\nunknowns: a, b\ninterior:\nrow: xi0^2, xi1\n"
        with pytest.raises(SpecSyntaxError, match="mixes orders") as err:
            parse_bvp_spec(text)
        assert err.value.line == 4

    def test_bad_token_column(self):
        text = "system bad\nunknowns: f\ninterior:\nrow: xi0 ** 2\n"
        with pytest.raises(SpecSyntaxError) as err:
            parse_bvp_spec(text)
        assert (err.value.line, err.value.column) == (4, 11)

    def test_unknown_symbol(self):
        with pytest.raises(SpecSyntaxError, match="unknown symbol 'q'"):
            parse_bvp_spec("system bad\nunknowns: f\ninterior:\nrow: q\n")

    def test_wrong_entry_count(self):
        with pytest.raises(SpecSyntaxError, match="expected 2"):
            parse_bvp_spec("system bad\nunknowns: a, b\ninterior:\nrow: xi0\n")

    def test_row_before_section(self):
        with pytest.raises(SpecSyntaxError, match="outside"):
            parse_bvp_spec("system bad\nunknowns: f\nrow: xi0\n")

    def test_missing_system(self):
        with pytest.raises(SpecSyntaxError, match="system"):
            parse_bvp_spec("unknowns: f\n")

    def test_unknown_guard(self):
        names = ", ".join(f"u{k}" for k in range(33))
        with pytest.raises(sy.SymbolError, match="exceed"):
            parse_bvp_spec(f"system big\nunknowns: {names}\n")
