"""Closed-form stationary vacuum data: Minkowski, Schwarzschild and Kerr.

The Kerr metric in Boyer-Lindquist form is split as
``g_tt (dt + (g_tphi / g_tt) dphi)^2 + g_S`` by completing the square, which
gives ``exp(2u) = -g_tt``, the connection form ``theta = (g_tphi/g_tt) dphi``
and the orbit-space metric
``g_S = Sigma/Delta dr^2 + Sigma dtheta^2 + Delta Sigma sin^2 / (Sigma - 2Mr) dphi^2``.
Boyer-Lindquist (r, theta, phi) are identified with the grid's spherical
coordinates, so Cartesian components follow from the flat frame.

Metric and lapse jets are attached in closed form (sympy derivatives in
spherical coordinates, then the exact chain rule). The twist potential is
obtained numerically from the twist form unless the closed form is requested.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from .systems import ProjectionData, twist_form, twist_potential
from .tensors import flat_metric

FAMILIES = ("minkowski", "schwarzschild", "kerr")
HORIZON_MARGIN = 0.05

_r, _th, _ph, _M, _a = sp.symbols("r theta phi M a", real=True)


class OracleDomainError(ValueError):
    """Raised when the grid reaches the horizon or ergoregion of an oracle."""


@dataclass(frozen=True)
class OracleSpec:
    family: str
    M: float = 0.0
    a: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown oracle family {self.family!r}")
        if self.family == "kerr" and not abs(self.a) < self.M and not (self.a == 0.0):
            raise ValueError("kerr requires |a| < M")
        if self.M < 0:
            raise ValueError("mass must be non-negative")


def _symbolic_fields():
    """Cartesian components of g_S, u, psi and theta as functions of (r, theta, phi)."""
    r, th, ph, M, a = _r, _th, _ph, _M, _a
    s, c = sp.sin(th), sp.cos(th)
    n = [s * sp.cos(ph), s * sp.sin(ph), c]
    et = [c * sp.cos(ph), c * sp.sin(ph), -s]
    ep = [-sp.sin(ph), sp.cos(ph), sp.Integer(0)]
    sig = r**2 + a**2 * c**2
    delta = r**2 - 2 * M * r + a**2
    red = sig - 2 * M * r
    A = sig / delta
    B = sig / r**2
    C = delta * sig / (r**2 * red)
    g = [A * n[i] * n[j] + B * et[i] * et[j] + C * ep[i] * ep[j] for i in range(3) for j in range(3)]
    u = sp.log(red / sig) / 2
    psi = M * a * c / sig
    theta = [2 * M * a * s / red * ep[i] for i in range(3)]
    return {"g": g, "u": [u], "psi": [psi], "theta": theta}


_SECOND = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@lru_cache(maxsize=None)
def _compiled(name):
    exprs = _symbolic_fields()[name]
    coords = (_r, _th, _ph)
    out = []
    for e in exprs:
        out.append(e)
        out.extend(sp.diff(e, x) for x in coords)
        out.extend(sp.diff(e, coords[i], coords[j]) for i, j in _SECOND)
    return sp.lambdify((_r, _th, _ph, _M, _a), out, modules="numpy", cse=True), len(exprs)


def analytic_jet(grid, name, M, a):
    """Closed-form value and Cartesian 2-jet of one oracle field on ``grid``."""
    fn, ncomp = _compiled(name)
    vals = fn(grid.R, grid.TH, grid.PH, M, a)
    vals = [np.broadcast_to(np.asarray(v, dtype=float), grid.shape) for v in vals]
    per = 10
    comp = np.array([vals[k * per] for k in range(ncomp)])
    first = np.array([[vals[k * per + 1 + d] for k in range(ncomp)] for d in range(3)])
    second = np.empty((3, 3, ncomp) + grid.shape)
    for idx, (i, j) in enumerate(_SECOND):
        block = np.array([vals[k * per + 4 + idx] for k in range(ncomp)])
        second[i, j] = block
        second[j, i] = block
    rank_shape = {"g": (3, 3), "theta": (3,), "u": (), "psi": ()}[name]
    T = comp.reshape(rank_shape + grid.shape)
    return grid.cartesian_jet(T, first, second)


def _check_domain(grid, spec):
    M, a = spec.M, spec.a
    if M == 0.0:
        return
    if spec.family == "schwarzschild" and not grid.r_min > 2.0 * M * (1.0 + HORIZON_MARGIN):
        raise OracleDomainError(
            f"horizon r = 2M = {2 * M} too close to r_min = {grid.r_min} (margin {HORIZON_MARGIN})")
    sig = grid.R**2 + a**2 * np.cos(grid.TH) ** 2
    red = 1.0 - 2.0 * M * grid.R / sig
    if np.any(red <= 0.0):
        raise OracleDomainError("grid intersects the ergoregion: 1 - 2Mr/Sigma <= 0 at some node")


def minkowski(grid):
    zero = np.zeros(grid.shape)
    g = flat_metric(grid.shape)
    jets = {
        "g": grid.cartesian_jet(g, np.zeros((3, 9) + grid.shape), np.zeros((3, 3, 9) + grid.shape)),
        "u": grid.cartesian_jet(zero, np.zeros((3, 1) + grid.shape), np.zeros((3, 3, 1) + grid.shape)),
    }
    jets["psi"] = jets["u"]
    return ProjectionData(grid, g, zero, zero, jets=jets)


def schwarzschild(grid, M):
    spec = OracleSpec("schwarzschild", M, 0.0)
    _check_domain(grid, spec)
    if M == 0.0:
        return minkowski(grid)
    gj, uj = analytic_jet(grid, "g", M, 0.0), analytic_jet(grid, "u", M, 0.0)
    zero = np.zeros(grid.shape)
    pj = analytic_jet(grid, "psi", M, 0.0)
    return ProjectionData(grid, gj.val, uj.val, zero, jets={"g": gj, "u": uj, "psi": pj})


def kerr_theta_form(grid, M, a):
    return analytic_jet(grid, "theta", M, a).val


def kerr(grid, M, a, psi="quadrature"):
    """Kerr data; ``psi`` is "quadrature" (from the twist form) or "closed-form"."""
    spec = OracleSpec("kerr", M, a)
    _check_domain(grid, spec)
    if M == 0.0:
        return minkowski(grid)
    gj, uj = analytic_jet(grid, "g", M, a), analytic_jet(grid, "u", M, a)
    jets = {"g": gj, "u": uj}
    if psi == "closed-form":
        pj = analytic_jet(grid, "psi", M, a)
        jets["psi"] = pj
        values = pj.val
    elif psi == "quadrature":
        if a == 0.0:
            values = np.zeros(grid.shape)
        else:
            # one-sided closures leave non-smooth O(h^p) errors in omega that
            # the Laplacian of psi would amplify; difference two orders higher
            fine = grid.with_stencil_order(grid.stencil_order + 2)
            omega, closure = twist_form(fine, uj.val, kerr_theta_form(grid, M, a), gj.val)
            values = twist_potential(fine, omega, closure=closure)
    else:
        raise ValueError(f"unknown psi method {psi!r}")
    return ProjectionData(grid, gj.val, uj.val, values, jets=jets)


def oracle(grid, family, M=0.0, a=0.0, psi="quadrature"):
    spec = OracleSpec(family, M, a)
    if spec.family == "minkowski":
        return minkowski(grid)
    if spec.family == "schwarzschild":
        return schwarzschild(grid, M)
    return kerr(grid, M, a, psi=psi)
