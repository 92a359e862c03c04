"""Exact principal-symbol calculus and the Agmon-Douglis-Nirenberg test.

Symbols are polynomials in the cotangent variables (xi0, xi1, xi2) and a
positive weight parameter ``s`` with Gaussian-rational coefficients; index 0
is the boundary normal. A derivative d_k has symbol i xi_k. At a boundary
point the covector is xi = eta + z mu with tangential eta = (eta1, eta2) and
unit normal mu, so every entry becomes a polynomial in z (and s).

The complementing test forms ``B(z) adj(L(z))``, reduces each entry modulo
``l+(z)`` (the monic product over the roots of det L with positive imaginary
part) and checks that the eight rows of remainder coefficients are linearly
independent over Q(i)(s). All arithmetic is exact (sympy's Gaussian rational
domain); there are no thresholds.
"""

from dataclasses import asdict, dataclass, field
from fractions import Fraction

import sympy as sp
from sympy import QQ_I
from sympy.polys.matrices import DomainMatrix
from sympy.polys.rings import ring

MAX_UNKNOWNS = 32
METRIC_UNKNOWNS = ("h00", "h01", "h02", "h11", "h12", "h22", "v", "sigma")
BUILTINS = ("P1", "Phat", "P2")

XI_RING, XI0, XI1, XI2, S_XI = ring("xi0 xi1 xi2 s", QQ_I)
Z_SYM, S_SYM = sp.symbols("z s")
ZS = QQ_I[Z_SYM, S_SYM]
Z, S = ZS.gens
S_FIELD = QQ_I.frac_field(S_SYM)


class SymbolError(ValueError):
    """Invalid symbol input or unsupported exact-mode request."""


def gaussian(value):
    """Coerce an int, Fraction, 'p/q' string or sympy number to Q(i)."""
    if isinstance(value, str):
        value = Fraction(value)
    if isinstance(value, Fraction):
        return QQ_I(sp.Rational(value.numerator, value.denominator))
    return QQ_I.from_sympy(sp.nsimplify(value))


def parse_eta(text):
    """``"p1/q1,p2/q2"`` -> pair of Fractions."""
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise SymbolError(f"eta needs two components, got {text!r}")
    try:
        return tuple(Fraction(p) for p in parts)
    except (ValueError, ZeroDivisionError) as exc:
        raise SymbolError(f"bad eta {text!r}: {exc}") from exc


def rational_norm(eta):
    """Exact |eta| for rational eta, or SymbolError if it is irrational."""
    e1, e2 = (Fraction(x) for x in eta)
    sq = e1 * e1 + e2 * e2
    if sq == 0:
        raise SymbolError("eta must be non-zero")
    num, den = sp.sqrt(sp.Integer(sq.numerator)), sp.sqrt(sp.Integer(sq.denominator))
    if not (num.is_Integer and den.is_Integer):
        raise SymbolError(f"|eta| = sqrt({sq}) is irrational; use a Pythagorean pair such as (3/5, 4/5)")
    return Fraction(int(num), int(den))


# ------------------------------------------------------------ formatting


def format_gaussian(c):
    """Exact Q(i) number as text: ``3/2``, ``-i``, ``1/2 + 3*i``."""
    re, im = sp.Rational(QQ_I.to_sympy(c).as_real_imag()[0]), sp.Rational(QQ_I.to_sympy(c).as_real_imag()[1])
    if im == 0:
        return str(re)
    imag = "i" if im == 1 else "-i" if im == -1 else f"{im}*i"
    if re == 0:
        return imag
    return f"{re} + {imag}" if im > 0 else f"{re} - {imag.lstrip('-')}"


@dataclass(frozen=True)
class CPoly:
    """Polynomial in z with Q(i) coefficients, possibly carrying powers of s."""

    value: object

    @classmethod
    def of(cls, x):
        return cls(ZS.convert(x))

    def degree(self):
        return -1 if not self.value else max(m[0] for m in self.value.monoms())

    def is_zero(self):
        return not self.value

    def at(self, z=None, s=None):
        """Substitute exact numbers for z and/or s; returns a CPoly."""
        out = ZS.zero
        for (a, b), c in self.value.terms():
            term = ZS.convert(c)
            term *= (ZS.convert(z) ** a if z is not None else Z**a)
            term *= (ZS.convert(s) ** b if s is not None else S**b)
            out += term
        return CPoly(out)

    def constant(self):
        if any(m != (0, 0) for m in self.value.monoms()):
            raise SymbolError(f"{self} is not constant")
        return self.value.coeff(1) if self.value else QQ_I.zero

    def __str__(self):
        return str(ZS.to_sympy(self.value).expand())

    def __eq__(self, other):
        if isinstance(other, CPoly):
            return self.value == other.value
        return self.value == ZS.convert(other)

    def __hash__(self):
        return hash(str(self))


class SymbolMatrix:
    """Matrix of CPoly entries with unknown names and the tangential covector."""

    def __init__(self, dm, unknowns, eta):
        self.dm = dm
        self.unknowns = tuple(unknowns)
        self.eta = tuple(Fraction(x) for x in eta)
        if self.dm.shape[1] != len(self.unknowns):
            raise SymbolError("column count must equal the number of unknowns")
        if all(x == 0 for x in self.eta):
            raise SymbolError("eta must be non-zero")

    @property
    def shape(self):
        return self.dm.shape

    def entry(self, i, j):
        return CPoly(self.dm[i, j].element)

    def rows(self):
        return [[self.entry(i, j) for j in range(self.shape[1])] for i in range(self.shape[0])]

    def __matmul__(self, other):
        return SymbolMatrix(self.dm * other.dm, other.unknowns, self.eta)

    def __eq__(self, other):
        return isinstance(other, SymbolMatrix) and self.dm == other.dm

    def to_sympy(self):
        return self.dm.to_Matrix()

    def evaluate(self, z=None, s=None):
        vals = [[self.entry(i, j).at(z, s).value for j in range(self.shape[1])]
                for i in range(self.shape[0])]
        return SymbolMatrix(DomainMatrix(vals, self.shape, ZS), self.unknowns, self.eta)

    def constant_matrix(self, field=QQ_I):
        """Entries as constants in Q(i) (or Q(i)(s) when s remains)."""
        rows = []
        for i in range(self.shape[0]):
            row = []
            for j in range(self.shape[1]):
                p = self.entry(i, j).value
                if any(m[0] != 0 for m in p.monoms()):
                    raise SymbolError("matrix still depends on z")
                row.append(field.from_sympy(ZS.to_sympy(p)))
            rows.append(row)
        return DomainMatrix(rows, self.shape, field)


def identity_symbol(n, eta=(1, 0)):
    return SymbolMatrix(DomainMatrix.eye(n, ZS), [f"x{k}" for k in range(n)], eta)


def det_symbol(L):
    """Exact determinant of a square SymbolMatrix."""
    if L.shape[0] != L.shape[1]:
        raise SymbolError(f"determinant needs a square matrix, got {L.shape}")
    return CPoly(L.dm.det())


def adjugate(L):
    if L.shape[0] != L.shape[1]:
        raise SymbolError(f"adjugate needs a square matrix, got {L.shape}")
    return SymbolMatrix(L.dm.adjugate(), L.unknowns, L.eta)


# ---------------------------------------------------------------- BVP spec


@dataclass
class BVPSpec:
    """Interior and boundary rows as polynomials in (xi0, xi1, xi2, s)."""

    name: str
    unknowns: tuple
    interior: list
    boundary: list
    gauge: str = None
    interior_orders: list = field(default_factory=list)
    boundary_orders: list = field(default_factory=list)

    def __post_init__(self):
        self.unknowns = tuple(self.unknowns)
        n = len(self.unknowns)
        if n == 0:
            raise SymbolError("a system needs at least one unknown")
        if n > MAX_UNKNOWNS:
            raise SymbolError(f"{n} unknowns exceed the exact-elimination guard of {MAX_UNKNOWNS}")
        if len(set(self.unknowns)) != n:
            raise SymbolError("unknown names must be distinct")
        self.interior_orders = [row_order(r, n, f"interior row {k + 1}") for k, r in enumerate(self.interior)]
        self.boundary_orders = [row_order(r, n, f"boundary row {k + 1}") for k, r in enumerate(self.boundary)]

    def symbols(self, eta):
        """(L, B) with xi = (z, eta1, eta2) substituted."""
        e1, e2 = (gaussian(Fraction(x)) for x in eta)

        def sub(p):
            out = ZS.zero
            for (a, b, c, d), coef in p.terms():
                out += ZS.convert(coef * e1**b * e2**c) * Z**a * S**d
            return out

        def mat(rows):
            if not rows:
                return DomainMatrix.zeros((0, len(self.unknowns)), ZS)
            return DomainMatrix([[sub(p) for p in r] for r in rows], (len(rows), len(self.unknowns)), ZS)

        return (SymbolMatrix(mat(self.interior), self.unknowns, eta),
                SymbolMatrix(mat(self.boundary), self.unknowns, eta))

    def with_boundary_row(self, index, row, name=None):
        rows = list(self.boundary)
        rows[index] = list(row)
        return BVPSpec(name or self.name, self.unknowns, list(self.interior), rows, self.gauge)


def _xi_degree(p):
    degs = {a + b + c for (a, b, c, _), _coef in p.terms()}
    if len(degs) > 1:
        return None
    return degs.pop()


def row_order(row, n_unknowns, label):
    """Common xi-degree of the non-zero entries of a row."""
    if len(row) != n_unknowns:
        raise SymbolError(f"{label} has {len(row)} entries, expected {n_unknowns}")
    orders = set()
    for k, p in enumerate(row):
        if not p:
            continue
        d = _xi_degree(p)
        if d is None:
            raise SymbolError(f"{label}, entry {k + 1} is not homogeneous in xi")
        orders.add(d)
    if not orders:
        raise SymbolError(f"{label} is identically zero")
    if len(orders) > 1:
        raise SymbolError(f"{label} mixes orders {sorted(orders)}")
    return orders.pop()


# ----------------------------------------------------- builtin operators


def _metric_index():
    pairs = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    col = {}
    for k, (a, b) in enumerate(pairs):
        col[(a, b)] = col[(b, a)] = k
    return pairs, col


def _row(entries):
    r = [XI_RING.zero] * 8
    for k, val in entries:
        r[k] += val
    return r


def builtin_spec(which):
    """BVPSpec of P1 = (L1, B1), Phat = (L1, B2) or P2 = (L2, B2)."""
    if which not in BUILTINS:
        raise SymbolError(f"unknown builtin {which!r}; choose from {BUILTINS}")
    xi = (XI0, XI1, XI2)
    I = XI_RING(QQ_I(0, 1))
    half = XI_RING(QQ_I(sp.Rational(1, 2)))
    pairs, col = _metric_index()
    norm2 = XI0**2 + XI1**2 + XI2**2
    V, SIG = 6, 7
    trace = [(col[(0, 0)], XI_RING.one), (col[(1, 1)], XI_RING.one), (col[(2, 2)], XI_RING.one)]

    def contraction():
        # xi^k xi^l h_kl on the packed unknowns
        return [(col[(a, b)], (1 if a == b else 2) * xi[a] * xi[b]) for a, b in pairs]

    interior = []
    for a, b in pairs:
        entries = [(col[(a, b)], norm2)]
        if which == "P2":
            entries += [(k, xi[a] * xi[b] * c) for k, c in trace]
            if a == b:
                entries += [(k, -norm2 * c) for k, c in trace]
                entries += contraction()
        interior.append(_row(entries))
    interior.append(_row([(V, 8 * norm2)]))
    interior.append(_row([(SIG, 8 * S_XI * norm2)]))

    boundary = []
    for j in range(3):
        # divergence -i xi^k h_kj, plus 1/2 i xi_j tr h for the Bianchi operator
        entries = [(col[(k, j)], -I * xi[k]) for k in range(3)]
        if which == "P1":
            entries += [(k, half * I * xi[j] * c) for k, c in trace]
        boundary.append(_row(entries))
    boundary.append(_row([(col[(1, 1)], XI_RING.one), (V, XI_RING(-2))]))
    boundary.append(_row([(col[(1, 2)], XI_RING.one)]))
    boundary.append(_row([(col[(2, 2)], XI_RING.one), (V, XI_RING(-2))]))
    boundary.append(_row([(col[(1, 1)], half * I * XI0), (col[(2, 2)], half * I * XI0),
                          (col[(0, 1)], -I * XI1), (col[(0, 2)], -I * XI2), (V, -2 * I * XI0)]))
    boundary.append(_row([(SIG, I * XI0)]))
    gauge = "bianchi" if which == "P1" else "divergence"
    return BVPSpec(which, METRIC_UNKNOWNS, interior, boundary, gauge)


def builtin_symbols(which, eta):
    return builtin_spec(which).symbols(eta)


def duplicated_row_control(which="P1"):
    """The builtin system with its last boundary row replaced by the one before it."""
    spec = builtin_spec(which)
    return spec.with_boundary_row(len(spec.boundary) - 1, spec.boundary[-2], f"{which}-duplicated")


# ------------------------------------------------------------ verdicts


@dataclass
class EllipticityVerdict:
    properly_elliptic: bool
    roots: list
    l: str
    l_plus: str = None
    complementing: bool = None
    nullspace: list = field(default_factory=list)
    specialized: bool = None
    samples: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _roots_with_multiplicity(l):
    """Exact roots of det L in z (s set to 1, a positive unit)."""
    poly = l.at(s=1)
    expr = ZS.to_sympy(poly.value)
    if expr == 0:
        raise SymbolError("det L vanishes identically")
    p = sp.Poly(expr, Z_SYM, domain="QQ_I")
    roots = sp.roots(p, multiple=False)
    if sum(roots.values()) != p.degree():
        raise SymbolError("det L has roots that are not available in closed form")
    return p, roots


def properly_elliptic(L, eta=None):
    """(flag, roots) for det L(eta + z mu); roots are (value, multiplicity, Im sign)."""
    if L.shape[0] != L.shape[1]:
        raise SymbolError(f"properly_elliptic needs a square interior symbol, got {L.shape}")
    l = det_symbol(L)
    p, roots = _roots_with_multiplicity(l)
    out = []
    real = False
    upper = lower = 0
    for r, m in sorted(roots.items(), key=lambda t: (sp.im(t[0]), sp.re(t[0]))):
        im = sp.im(r)
        if im == 0:
            real = True
        elif im > 0:
            upper += m
        else:
            lower += m
        out.append((r, m))
    flag = (not real) and upper == lower and p.degree() > 0
    return flag, out


def l_plus(roots):
    """Monic product over roots with positive imaginary part, as a CPoly."""
    out = ZS.one
    for r, m in roots:
        if sp.im(r) > 0:
            try:
                c = QQ_I.from_sympy(r)
            except Exception as exc:
                raise SymbolError(f"root {r} is not a Gaussian rational; exact reduction unavailable") from exc
            out *= (Z - ZS.convert(c)) ** m
    return CPoly(out)


def _remainder_matrix(M, lp):
    """Stack the z-coefficients of ``M mod l+`` row by row over Q(i)(s)."""
    deg = lp.degree()
    rows = []
    for i in range(M.shape[0]):
        row = []
        for j in range(M.shape[1]):
            rem = M.dm[i, j].element.rem(lp.value)
            coeffs = [S_FIELD.zero] * deg
            for (a, b), c in rem.terms():
                coeffs[a] += S_FIELD.convert(c) * S_FIELD.from_sympy(S_SYM) ** b
            row.extend(coeffs)
        rows.append(row)
    return DomainMatrix(rows, (M.shape[0], M.shape[1] * deg), S_FIELD)


def format_vector(vec):
    return [str(sp.nsimplify(S_FIELD.to_sympy(c))) for c in vec]


def complementing_check(L, B, eta=None):
    """ADN verdict for (L, B) at the tangential covector carried by L."""
    ok, roots = properly_elliptic(L)
    l = det_symbol(L)
    verdict = EllipticityVerdict(ok, [(str(r), int(m)) for r, m in roots], str(l))
    if not ok:
        return verdict
    lp = l_plus(roots)
    verdict.l_plus = str(sp.factor(ZS.to_sympy(lp.value)))
    if B.shape[0] != lp.degree():
        raise SymbolError(f"{B.shape[0]} boundary rows, but l+ has degree {lp.degree()}")
    M = B @ adjugate(L)
    R = _remainder_matrix(M, lp)
    rank = R.rank()
    verdict.complementing = rank == B.shape[0]
    if not verdict.complementing:
        verdict.nullspace = [format_vector(R.transpose().nullspace().to_Matrix().row(k))
                             for k in range(B.shape[0] - rank)]
    return verdict


def specialized_nondegeneracy(L, B, eta):
    """Invertibility of B at z = i|eta| (valid when det L has roots +-i|eta| only)."""
    norm = rational_norm(eta)
    _, roots = properly_elliptic(L)
    target = sp.I * sp.Rational(norm.numerator, norm.denominator)
    mults = {sp.nsimplify(r): m for r, m in roots}
    if set(mults) != {target, -target} or mults[target] != mults[-target]:
        raise SymbolError("specialised test needs the root structure +-i|eta| with equal multiplicity")
    if B.shape[0] != B.shape[1]:
        raise SymbolError("specialised test needs a square boundary symbol")
    Bz = B.evaluate(z=QQ_I(0, sp.Rational(norm.numerator, norm.denominator)))
    return Bz.constant_matrix(S_FIELD).rank() == B.shape[0]


def boundary_rows_at_root(B, eta):
    """Constant matrix B(eta + i|eta| mu) over Q(i) (s, if present, set to 1)."""
    norm = rational_norm(eta)
    Bz = B.evaluate(z=QQ_I(0, sp.Rational(norm.numerator, norm.denominator)), s=1)
    return Bz.constant_matrix(QQ_I)


def format_row_equation(row, unknowns):
    """Linear form ``sum c_k x_k`` with exact coefficients, zero terms dropped."""
    terms = []
    for c, name in zip(row, unknowns):
        if c == QQ_I.zero:
            continue
        terms.append(f"({format_gaussian(c)})*{name}")
    return " + ".join(terms) if terms else "0"


def check_spec(spec, etas):
    """Run the full verdict for every eta sample; the top-level verdict is the first sample's."""
    samples = []
    first = None
    for eta in etas:
        L, B = spec.symbols(eta)
        v = complementing_check(L, B)
        try:
            v.specialized = specialized_nondegeneracy(L, B, eta) if v.properly_elliptic else None
        except SymbolError:
            v.specialized = None
        rec = {"eta": [str(x) for x in eta], "properly_elliptic": v.properly_elliptic,
               "complementing": v.complementing, "specialized_nondegeneracy": v.specialized,
               "l": v.l, "l_plus": v.l_plus, "roots": [[r, m] for r, m in v.roots],
               "nullspace": v.nullspace}
        samples.append(rec)
        first = first or v
    first.samples = samples
    return first


def verdicts_agree(verdict):
    """True when every eta sample returned the same verdict flags."""
    keys = ("properly_elliptic", "complementing", "specialized_nondegeneracy")
    ref = tuple(verdict.samples[0][k] for k in keys)
    return all(tuple(s[k] for k in keys) == ref for s in verdict.samples)
