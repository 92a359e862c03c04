"""Line-oriented text format for boundary value problem symbol specs.

Example::

    system laplace
    unknowns: f
    interior:
    row: xi0^2 + xi1^2 + xi2^2
    boundary:
    row: 1

Polynomials use the tokens ``xi0 xi1 xi2 i s``, the operators ``+ - * ^``,
parentheses and rational literals such as ``3`` or ``1/2``. Products must be
written explicitly. ``#`` starts a comment.
"""

import re

import sympy as sp
from sympy import QQ_I

from .symbols import S_XI, XI0, XI1, XI2, XI_RING, BVPSpec, SymbolError, format_gaussian

VARIABLES = {"xi0": XI0, "xi1": XI1, "xi2": XI2, "s": S_XI, "i": XI_RING(QQ_I(0, 1))}
_TOKEN = re.compile(r"\s*(?:(?P<num>\d+(?:/\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*^(),]))")
_IDENT = re.compile(r"[A-Za-z_]\w*$")


class SpecSyntaxError(SymbolError):
    """Malformed spec text; carries 1-based line and column."""

    def __init__(self, message, line, column):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _tokenize(text, line, offset):
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            col = pos + offset + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise SpecSyntaxError(f"unexpected character {text[pos:].lstrip()[:1]!r}", line, col)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), start + offset + 1))
        pos = m.end()
    toks.append(("end", "", len(text) + offset + 1))
    return toks


class _RowParser:
    """Recursive-descent parser for one comma-separated row of polynomials."""

    def __init__(self, text, line, offset):
        self.toks = _tokenize(text, line, offset)
        self.k = 0
        self.line = line

    def peek(self):
        return self.toks[self.k]

    def take(self):
        tok = self.toks[self.k]
        self.k += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise SpecSyntaxError(msg, self.line, tok[2])

    def row(self):
        out = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            out.append(self.expr())
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return out

    def expr(self):
        value = self.term()
        while self.peek()[1] in "+-" and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self):
        value = self.unary()
        while self.peek()[1] == "*":
            self.take()
            value = value * self.unary()
        return value

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            value = self.unary()
            return -value if op == "-" else value
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] == "^":
            self.take()
            tok = self.take()
            if tok[0] != "num" or "/" in tok[1]:
                self.fail("exponent must be a non-negative integer", tok)
            base = base ** int(tok[1])
        return base

    def atom(self):
        tok = self.take()
        kind, text = tok[0], tok[1]
        if kind == "num":
            p, _, q = text.partition("/")
            if q and int(q) == 0:
                self.fail("division by zero", tok)
            return XI_RING(QQ_I(sp.Rational(int(p), int(q or 1))))
        if kind == "name":
            if text not in VARIABLES:
                self.fail(f"unknown symbol {text!r}; expected one of xi0 xi1 xi2 i s", tok)
            return VARIABLES[text]
        if text == "(":
            value = self.expr()
            if self.take()[1] != ")":
                self.fail("expected ')'", self.toks[self.k - 1])
            return value
        self.fail(f"unexpected {text or 'end of line'!r}", tok)


def parse_polynomial(text):
    return _RowParser(text, 1, 0).row()[0] if "," not in text else _fail_single(text)


def _fail_single(text):
    raise SpecSyntaxError("a single polynomial may not contain ','", 1, text.index(",") + 1)


def parse_bvp_spec(text):
    """Parse spec text into a validated BVPSpec."""
    name = gauge = unknowns = None
    section = None
    interior, boundary = [], []
    row_lines = {"interior": [], "boundary": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        body = line.strip()
        head, sep, rest = body.partition(":")
        key = head.strip()
        if body.startswith("system ") or body == "system":
            name = body[len("system"):].strip()
            if not _IDENT.match(name or ""):
                raise SpecSyntaxError("system needs an identifier name", lineno, indent + 1)
        elif sep and key == "unknowns":
            unknowns = [u.strip() for u in rest.split(",")]
            for u in unknowns:
                if not _IDENT.match(u):
                    raise SpecSyntaxError(f"bad unknown name {u!r}", lineno, indent + len(head) + 2)
        elif sep and key == "gauge":
            gauge = rest.strip() or None
        elif sep and key in ("interior", "boundary") and not rest.strip():
            section = key
        elif sep and key == "row":
            if section is None:
                raise SpecSyntaxError("row outside an interior: or boundary: block", lineno, indent + 1)
            if unknowns is None:
                raise SpecSyntaxError("unknowns: must precede the first row", lineno, indent + 1)
            offset = indent + len(head) + 1
            row = _RowParser(rest, lineno, offset).row()
            if len(row) != len(unknowns):
                raise SpecSyntaxError(f"row has {len(row)} entries, expected {len(unknowns)}",
                                      lineno, indent + 1)
            (interior if section == "interior" else boundary).append(row)
            row_lines[section].append(lineno)
        else:
            raise SpecSyntaxError(f"unrecognised line {body!r}", lineno, indent + 1)
    if name is None:
        raise SpecSyntaxError("missing 'system <name>' line", 1, 1)
    if unknowns is None:
        raise SpecSyntaxError("missing 'unknowns:' line", 1, 1)
    try:
        return BVPSpec(name, unknowns, interior, boundary, gauge)
    except SymbolError as exc:
        m = re.match(r"(interior|boundary) row (\d+)", str(exc))
        if m:
            ln = row_lines[m.group(1)][int(m.group(2)) - 1]
            raise SpecSyntaxError(f"{exc} (inhomogeneous or invalid row)", ln, 1) from exc
        raise


def _monomial(exps):
    parts = []
    for name, e in zip(("xi0", "xi1", "xi2", "s"), exps):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return parts


def format_polynomial(p):
    """Canonical text of a ring element: terms in descending ring order."""
    if not p:
        return "0"
    pieces = []
    for exps, c in sorted(p.terms(), reverse=True):
        re_, im = (sp.Rational(x) for x in QQ_I.to_sympy(c).as_real_imag())
        for coef, unit in ((re_, None), (im, "i")):
            if coef == 0:
                continue
            sign = "-" if coef < 0 else "+"
            mag = abs(coef)
            factors = ([] if mag == 1 else [str(mag)]) + ([unit] if unit else []) + _monomial(exps)
            pieces.append((sign, "*".join(factors) or "1"))
    first_sign, first = pieces[0]
    text = ("-" if first_sign == "-" else "") + first
    for sign, body in pieces[1:]:
        text += f" {sign} {body}"
    return text


def format_bvp_spec(spec):
    lines = [f"system {spec.name}"]
    if spec.gauge:
        lines.append(f"gauge: {spec.gauge}")
    lines.append("unknowns: " + ", ".join(spec.unknowns))
    lines.append("interior:")
    lines += ["row: " + ", ".join(format_polynomial(p) for p in r) for r in spec.interior]
    lines.append("boundary:")
    lines += ["row: " + ", ".join(format_polynomial(p) for p in r) for r in spec.boundary]
    return "\n".join(lines) + "\n"


__all__ = ["SpecSyntaxError", "parse_bvp_spec", "format_bvp_spec", "format_polynomial",
           "parse_polynomial", "format_gaussian"]
