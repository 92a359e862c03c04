"""Linearisations of the curvature, boundary and gauge operators.

The tangent formulas here are exact derivatives of the discrete jet formulas
in :mod:`geometry`, so they agree with centred differences of the nonlinear
operators up to the difference step. Principal-part operators (rough
Laplacian, delta* delta, Hessian of the trace, ...) are provided separately;
together they form the principal interior operator L and boundary operator B
acting on deformations (h, v, sigma) of conformal data.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import MetricGeometry, boundary_geometry, frame_components, lowered_christoffel
from .grid import Jet
from .systems import ResidualTriple

M2_ROWS = ("gauge", "metric", "mean_curvature", "neumann")


@dataclass
class DeformationTriple:
    """Infinitesimal deformation (h, v, sigma) of (g, u, psi)."""

    grid: object
    h: np.ndarray
    v: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        shape = self.grid.shape
        self.h = np.asarray(self.h)
        if self.h.shape != (3, 3) + shape:
            raise ValueError(f"h must have shape {(3, 3) + shape}")
        if not np.allclose(self.h, np.swapaxes(self.h, 0, 1), rtol=0, atol=1e-14 * (1 + np.abs(self.h).max())):
            raise ValueError("h must be symmetric")
        self.v = np.broadcast_to(np.asarray(self.v), shape)
        self.sigma = np.broadcast_to(np.asarray(self.sigma), shape)
        self._jets = {}

    def jet(self, name):
        if name not in self._jets:
            self._jets[name] = self.grid.jet(getattr(self, name))
        return self._jets[name]

    def __add__(self, other):
        return DeformationTriple(self.grid, self.h + other.h, self.v + other.v, self.sigma + other.sigma)

    def scaled(self, c):
        return DeformationTriple(self.grid, c * self.h, c * self.v, c * self.sigma)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((3, 3) + grid.shape), np.zeros(grid.shape), np.zeros(grid.shape))


# ------------------------------------------------------------- tangents


def inverse_prime(ginv, h):
    """Derivative of g^{-1} along h: ``-g^{-1} h g^{-1}``."""
    return -np.einsum("ka...,ab...,bl...->kl...", ginv, h, ginv)


def _raised_jet(geom, hjet):
    """``h^{kl} = g^{ka} h_ab g^{bl}`` and its partials."""
    gi, dgi = geom.ginv, geom.dinv
    h, dh = hjet.val, hjet.d1
    hup = np.einsum("ka...,ab...,bl...->kl...", gi, h, gi)
    dhup = (np.einsum("mka...,ab...,bl...->mkl...", dgi, h, gi)
            + np.einsum("ka...,mab...,bl...->mkl...", gi, dh, gi)
            + np.einsum("ka...,ab...,mbl...->mkl...", gi, h, dgi))
    return hup, dhup


def christoffel_prime(geom, hjet):
    """Tangent of the Christoffel symbols and of their partials along h."""
    hup, dhup = _raised_jet(geom, hjet)
    low = lowered_christoffel(geom.dg)
    dlow = np.moveaxis(lowered_christoffel(np.moveaxis(geom.ddg, 0, -1)), -1, 0)
    lowh = lowered_christoffel(hjet.d1)
    dlowh = np.moveaxis(lowered_christoffel(np.moveaxis(hjet.d2, 0, -1)), -1, 0)
    gam_p = np.einsum("kl...,lij...->kij...", geom.ginv, lowh) - np.einsum("kl...,lij...->kij...", hup, low)
    dgam_p = (np.einsum("mkl...,lij...->mkij...", geom.dinv, lowh)
              + np.einsum("kl...,mlij...->mkij...", geom.ginv, dlowh)
              - np.einsum("mkl...,lij...->mkij...", dhup, low)
              - np.einsum("kl...,mlij...->mkij...", hup, dlow))
    return gam_p, dgam_p


def ric_prime(geom, hjet):
    """Derivative of the Ricci tensor along h (exact tangent of the discrete formula)."""
    gam, gp, dgp = geom.gam, *christoffel_prime(geom, hjet)
    return (np.einsum("kkij...->ij...", dgp) - np.einsum("jkik...->ij...", dgp)
            + np.einsum("kkl...,lij...->ij...", gp, gam) + np.einsum("kkl...,lij...->ij...", gam, gp)
            - np.einsum("kjl...,lik...->ij...", gp, gam) - np.einsum("kjl...,lik...->ij...", gam, gp))


def s_prime(geom, hjet):
    """Derivative of the scalar curvature: ``g^ij Ric'_ij - h^ij R_ij``."""
    hup = np.einsum("ka...,ab...,bl...->kl...", geom.ginv, hjet.val, geom.ginv)
    return geom.trace(ric_prime(geom, hjet)) - np.einsum("ij...,ij...->...", hup, geom.ric)


# ------------------------------------------------------- principal parts


def trace_jet(geom, hjet):
    """2-jet of ``tr_g h``."""
    gi, dgi, ddgi = geom.ginv, geom.dinv, geom.ddinv
    h, dh, ddh = hjet.val, hjet.d1, hjet.d2
    val = np.einsum("ab...,ab...->...", gi, h)
    d1 = np.einsum("jab...,ab...->j...", dgi, h) + np.einsum("ab...,jab...->j...", gi, dh)
    d2 = (np.einsum("mjab...,ab...->mj...", ddgi, h) + np.einsum("jab...,mab...->mj...", dgi, dh)
          + np.einsum("mab...,jab...->mj...", dgi, dh) + np.einsum("ab...,mjab...->mj...", gi, ddh))
    return Jet(val, d1, d2)


def _cov_jet(geom, hjet):
    """``nabla_b h_ij`` and its partials ``d_a nabla_b h_ij``."""
    h, dh, ddh = hjet.val, hjet.d1, hjet.d2
    gam, dgam = geom.gam, geom.dgam
    C = geom.cov_sym(h, dh)
    dC = (ddh
          - np.einsum("alki...,lj...->akij...", dgam, h) - np.einsum("lki...,alj...->akij...", gam, dh)
          - np.einsum("alkj...,il...->akij...", dgam, h) - np.einsum("lkj...,ail...->akij...", gam, dh))
    return C, dC


def div_sym_jet(geom, hjet):
    """``delta h`` and its partials."""
    C, dC = _cov_jet(geom, hjet)
    val = -np.einsum("ik...,kij...->j...", geom.ginv, C)
    d1 = -np.einsum("mik...,kij...->mj...", geom.dinv, C) - np.einsum("ik...,mkij...->mj...", geom.ginv, dC)
    return val, d1


def rough_laplacian(geom, hjet):
    """``D*D h = -g^ab nabla_a nabla_b h``."""
    C, dC = _cov_jet(geom, hjet)
    gam = geom.gam
    second = (dC - np.einsum("lab...,lij...->abij...", gam, C)
              - np.einsum("lai...,blj...->abij...", gam, C)
              - np.einsum("laj...,bil...->abij...", gam, C))
    return -np.einsum("ab...,abij...->ij...", geom.ginv, second)


def delta_star_delta(geom, hjet):
    val, d1 = div_sym_jet(geom, hjet)
    return geom.delta_star(val, d1)


def delta_delta(geom, hjet):
    val, d1 = div_sym_jet(geom, hjet)
    return geom.div_form(val, d1)


def hessian_trace(geom, hjet):
    return geom.hessian(trace_jet(geom, hjet))


def laplacian_trace(geom, hjet):
    return geom.laplacian(trace_jet(geom, hjet))


def ric_principal(geom, hjet):
    """``1/2 (D*D h - 2 delta* delta h - D^2 tr h)``."""
    return 0.5 * (rough_laplacian(geom, hjet) - 2.0 * delta_star_delta(geom, hjet) - hessian_trace(geom, hjet))


def s_principal(geom, hjet):
    """``Delta tr h + delta delta h``."""
    return laplacian_trace(geom, hjet) + delta_delta(geom, hjet)


def ric_zero_order(geom, h):
    """Curvature terms completing the principal part of Ric' (dimension three).

    ``1/2 (Ric h + h Ric) - Rm(h)`` with the Riemann tensor written through
    the Ricci tensor, which is exact in three dimensions.
    """
    g, gi, ric, s = geom.g, geom.ginv, geom.ric, geom.s
    hup = np.einsum("ka...,ab...,bl...->kl...", gi, h, gi)
    ric_h = np.einsum("ik...,kl...,lj...->ij...", ric, gi, h)
    sym = 0.5 * (ric_h + np.swapaxes(ric_h, 0, 1))
    # R_ikjl h^kl with R_ikjl = g_ij R_kl + g_kl R_ij - g_il R_kj - g_kj R_il - s/2 (g_ij g_kl - g_il g_kj)
    tr_h = np.einsum("kl...,kl...->...", hup, g)
    ric_hh = np.einsum("kl...,kl...->...", ric, hup)
    hr = np.einsum("il...,kl...,kj...->ij...", g, hup, ric)
    rm = (g * ric_hh + ric * tr_h - hr - np.swapaxes(hr, 0, 1)
          - 0.5 * s * (g * tr_h - np.einsum("il...,kl...,kj...->ij...", g, hup, g)))
    return sym - rm


# ------------------------------------------------------------- boundary


def normal_prime(bslice, h_boundary):
    """Derivative of the unit normal: ``-h(nu)^sharp + 1/2 h(nu, nu) nu``."""
    nu, gi = bslice.nu, bslice.ginv
    h_nu = np.einsum("ab...,b...->a...", h_boundary, nu)
    return (-np.einsum("ka...,a...->k...", gi, h_nu)
            + 0.5 * np.einsum("a...,a...->...", h_nu, nu) * nu)


def H_prime(grid, gjet, hjet, bslice=None):
    """Derivative of the mean curvature of the inner sphere along h.

    ``div_g(n'_h) + 1/2 nu^i (g^kl d_i h_kl - h^kl d_i g_kl)``.
    """
    b = bslice or boundary_geometry(grid, gjet)
    hb = hjet.boundary()
    h, dh = hb.val, hb.d1
    gi, dgi, nu, dnu = b.ginv, b.dinv, b.nu, b.dnu
    h_nu = np.einsum("ab...,b...->a...", h, nu)
    hnn = np.einsum("a...,a...->...", h_nu, nu)
    X = -np.einsum("ka...,a...->k...", gi, h_nu) + 0.5 * hnn * nu
    dh_nu = np.einsum("iab...,b...->ia...", dh, nu) + np.einsum("ab...,ib...->ia...", h, dnu)
    dhnn = np.einsum("ia...,a...->i...", dh_nu, nu) + np.einsum("a...,ia...->i...", h_nu, dnu)
    dX = (-np.einsum("ika...,a...->ik...", dgi, h_nu) - np.einsum("ka...,ia...->ik...", gi, dh_nu)
          + 0.5 * np.einsum("i...,k...->ik...", dhnn, nu) + 0.5 * hnn * dnu)
    div_X = np.einsum("kk...->...", dX) + np.einsum("kki...,i...->...", b.gam, X)
    hup = np.einsum("ka...,ab...,bl...->kl...", gi, h, gi)
    trace_term = (np.einsum("kl...,ikl...->i...", gi, dh) - np.einsum("kl...,ikl...->i...", hup, b.dg))
    return div_X + 0.5 * np.einsum("i...,i...->...", nu, trace_term)


def gauge_prime(geom, hjet, kind="divergence"):
    """Linearised gauge at the reference metric: delta h, or delta h + 1/2 d tr h."""
    div = geom.div_sym(hjet.val, hjet.d1)
    if kind == "divergence":
        return div
    if kind != "bianchi":
        raise ValueError(f"unknown gauge kind {kind!r}")
    return div + 0.5 * trace_jet(geom, hjet).d1


# ------------------------------------------------------- L and B operators


def Z_term(geom, hjet, kind):
    if kind == "bianchi":
        return np.zeros_like(hjet.val)
    return (hessian_trace(geom, hjet) + laplacian_trace(geom, hjet) * geom.g
            + delta_delta(geom, hjet) * geom.g)


def L_apply(c, d, kind="divergence", geom=None):
    """Principal interior operator {D*D h - Z(h), 8 Delta v, 8e^-4u (Delta sigma + 4<du, dsigma>)}."""
    geom = geom or MetricGeometry(c.jet("g"), c.grid)
    hjet = d.jet("h")
    first = rough_laplacian(geom, hjet) - Z_term(geom, hjet, kind)
    ujet = c.jet("u")
    sjet = d.jet("sigma")
    third = 8.0 * np.exp(-4.0 * ujet.val) * (geom.laplacian(sjet) + 4.0 * geom.inner(ujet.d1, sjet.d1))
    return ResidualTriple(first, 8.0 * geom.laplacian(d.jet("v")), third)


def B_apply(c, d, kind="divergence", geom=None):
    """Principal boundary rows {G'_h, e^-2u (h - 2 v g)^T, H'_h - 2 nu(v), nu(sigma)}."""
    grid = c.grid
    geom = geom or MetricGeometry(c.jet("g"), grid)
    gjet = c.jet("g")
    b = boundary_geometry(grid, gjet)
    hjet = d.jet("h")
    G = gauge_prime(geom, hjet, kind)[..., 0, :, :]
    e1, e2 = grid.e_theta[:, 0], grid.e_phi[:, 0]
    hT = frame_components(hjet.val[..., 0, :, :], e1, e2)
    u0 = c.u[0]
    vb, sb = d.jet("v").boundary(), d.jet("sigma").boundary()
    return {
        "gauge": G,
        "metric": np.exp(-2.0 * u0) * (hT - 2.0 * vb.val * b.gT),
        "mean_curvature": H_prime(grid, gjet, hjet, b) - 2.0 * b.normal_derivative(vb.d1),
        "neumann": b.normal_derivative(sb.d1),
    }


def stack_boundary_rows(rows):
    """Boundary rows as an array (8, n_theta, n_phi)."""
    return np.concatenate([rows["gauge"], rows["metric"], rows["mean_curvature"][None],
                           rows["neumann"][None]], axis=0)


# --------------------------------------------------- self-adjointness


@dataclass
class BCFlags:
    """Measured sup-norms of the boundary rows defining the space M2."""

    values: dict
    tol: float
    passed: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = {k: bool(v <= self.tol) for k, v in self.values.items()}

    @property
    def all_passed(self):
        return all(self.passed.values())

    def failing(self):
        return [k for k, ok in self.passed.items() if not ok]


class BoundaryConditionError(ValueError):
    pass


def m2_flags(c, d, tol=1e-8, geom=None):
    rows = B_apply(c, d, "divergence", geom)
    return BCFlags({k: float(np.max(np.abs(rows[k]))) for k in M2_ROWS}, tol)


def pairing(geom, grid, a, b):
    """``int <a_h, b_h>_g + a_v b_v + a_sigma b_sigma dvol_g`` for triples."""
    dens = geom.inner_sym(a[0], b[0]) + a[1] * b[1] + a[2] * b[2]
    return float(np.sum(dens * geom.volume_form(grid)))


def deformation_norm(geom, grid, d):
    t = (d.h, d.v, d.sigma)
    return np.sqrt(pairing(geom, grid, t, t))


def self_adjoint_defect(c, d1, d2, tol=1e-8, check=True, normalise=True):
    """``<L2 d1, d2> - <L2 d2, d1>`` in the divergence gauge.

    Both deformations must satisfy the M2 boundary rows to ``tol`` unless
    ``check`` is false. With ``normalise`` the defect is divided by
    ``|d1| |d2|``.
    """
    grid = c.grid
    geom = MetricGeometry(c.jet("g"), grid)
    flags = []
    for name, d in (("d1", d1), ("d2", d2)):
        f = m2_flags(c, d, tol, geom)
        flags.append(f)
        if check and not f.all_passed:
            bad = ", ".join(f"{k} = {f.values[k]:.3e}" for k in f.failing())
            raise BoundaryConditionError(f"{name} violates the M2 boundary rows: {bad} (tol {tol:g})")
    l1 = L_apply(c, d1, "divergence", geom)
    l2 = L_apply(c, d2, "divergence", geom)
    a = pairing(geom, grid, (l1.E, l1.F, l1.H), (d2.h, d2.v, d2.sigma))
    b = pairing(geom, grid, (l2.E, l2.F, l2.H), (d1.h, d1.v, d1.sigma))
    defect = a - b
    if normalise:
        defect /= deformation_norm(geom, grid, d1) * deformation_norm(geom, grid, d2)
    return defect, flags


# ---------------------------------------------------- test deformations


def bump(x):
    """``(1 - x^2)^4`` on |x| < 1, zero outside; C^3 with compact support."""
    x = np.asarray(x)
    return np.where(np.abs(x) < 1.0, (1.0 - x**2) ** 4, 0.0)


def _sym_outer(a, b):
    return np.einsum("i...,j...->ij...", a, b) + np.einsum("i...,j...->ij...", b, a)


def random_deformation(grid, rng, r_support=None):
    """Smooth axisymmetric deformation supported in r < r_support.

    The default support reaches halfway to the outer sphere.

    Built from delta, n n, e_z e_z, n.e_z and t.e_z (t the rotation field
    over r) times random functions of (1/r, cos theta).
    """
    R = grid.r_min
    r_support = r_support or 0.5 * (grid.r_min + grid.r_max)
    prof = bump((grid.R - R) / (r_support - R))
    ct = np.cos(grid.TH)

    def rand_fn():
        a = rng.normal(size=(3, 3))
        return sum(a[k, l] * (R / grid.R) ** k * ct**l for k in range(3) for l in range(3))

    n = grid.normal
    ez = np.zeros_like(n)
    ez[2] = 1.0
    t = np.array([-grid.x[1], grid.x[0], 0.0 * grid.R]) / grid.R
    eye = np.eye(3).reshape(3, 3, 1, 1, 1) * np.ones(grid.shape)
    basis = [eye, _sym_outer(n, n), _sym_outer(ez, ez), _sym_outer(n, ez), _sym_outer(t, ez)]
    h = sum(rand_fn() * B for B in basis) * prof * 0.1
    v = rand_fn() * prof * 0.1
    sigma = rand_fn() * prof * 0.1
    return DeformationTriple(grid, h, v, sigma)


class M2Projector:
    """Corrects deformations so that they satisfy the M2 boundary rows.

    Correction modes live in a thin layer at the inner sphere, one set per
    theta node: tangential metric components with a profile equal to one at
    the boundary, normal-tangential components and (v, sigma) with a profile
    vanishing at the boundary but with unit normal slope. The coefficients
    solve the discrete boundary rows exactly. Axisymmetric grids only.
    """

    def __init__(self, c, width=None, include_neumann=True):
        grid = c.grid
        if not grid.axisymmetric:
            raise NotImplementedError("M2 corrections are built for axisymmetric grids")
        self.c = c
        self.grid = grid
        self.geom = MetricGeometry(c.jet("g"), grid)
        R = grid.r_min
        width = width or R
        rho = grid.R - R
        self.phi0 = bump(rho / width)
        self.phi1 = rho * self.phi0
        self.include_neumann = include_neumann
        self.n_modes = 8 if include_neumann else 7
        n, e1, e2 = grid.normal, grid.e_theta, grid.e_phi
        self.tensors = [_sym_outer(e1, e1), _sym_outer(e1, e2), _sym_outer(e2, e2),
                        _sym_outer(n, n), _sym_outer(n, e1), _sym_outer(n, e2)]
        self._assemble()

    def _mode(self, m, mask):
        grid = self.grid
        zero_h = np.zeros((3, 3) + grid.shape)
        zero = np.zeros(grid.shape)
        if m < 3:
            return DeformationTriple(grid, self.tensors[m] * self.phi0 * mask, zero, zero)
        if m < 6:
            return DeformationTriple(grid, self.tensors[m] * self.phi1 * mask, zero, zero)
        if m == 6:
            return DeformationTriple(grid, zero_h, self.phi1 * mask, zero)
        return DeformationTriple(grid, zero_h, zero, self.phi1 * mask)

    def rows(self, d):
        out = stack_boundary_rows(B_apply(self.c, d, "divergence", self.geom))[:, :, 0]
        return out[: self.n_modes]

    def _assemble(self):
        grid = self.grid
        nt = grid.n_theta
        p = grid.stencil_order
        n_colour = p + 1
        windows = [set() for _ in range(nt)]
        for st in (*grid.st1.values(), *grid.st2.values()):
            for j in range(nt):
                windows[j].update(int(i) for i, cf in zip(st.idx[j], st.coef[j]) if cf != 0.0)
        nm = self.n_modes
        mat = np.zeros((nm * nt, nm * nt))
        for m in range(nm):
            for colour in range(n_colour):
                cols = np.arange(colour, nt, n_colour)
                mask = np.zeros(grid.shape)
                mask[:, cols, :] = 1.0
                rows = self.rows(self._mode(m, mask))
                for j in range(nt):
                    hits = [jj for jj in windows[j] if jj % n_colour == colour]
                    if hits:
                        mat[j * nm:(j + 1) * nm, hits[0] * nm + m] = rows[:, j]
        self.matrix = mat
        self.lu = None

    def project(self, d):
        grid = self.grid
        nt, nm = grid.n_theta, self.n_modes
        rhs = -self.rows(d).T.reshape(-1)
        coef = np.linalg.solve(self.matrix, rhs).reshape(nt, nm)
        out = d
        for m in range(nm):
            mask = np.zeros(grid.shape)
            mask[:] = coef[None, :, m, None]
            out = out + self._mode(m, mask)
        return out


def random_m2_pair(c, rng, require_bc=True, projector=None):
    """Two random deformations satisfying the M2 rows.

    With ``require_bc=False`` the second deformation keeps a non-zero
    normal derivative of sigma at the boundary (all other rows hold).
    """
    proj = projector or M2Projector(c)
    d1 = proj.project(random_deformation(c.grid, rng))
    d2_raw = random_deformation(c.grid, rng)
    if require_bc:
        return d1, proj.project(d2_raw)
    loose = M2Projector(c, include_neumann=False)
    return d1, loose.project(d2_raw)


# ------------------------------------------------------------ delta delta*


def delta_delta_star_solve(grid, g, W, g_jet=None):
    """Solve ``delta delta* X = W`` with X = 0 on both bounding spheres.

    ``g`` is the metric (components); ``W`` a 1-form (3, ...). Returns X and
    the relative residual of the discrete system.
    """
    from scipy.sparse.linalg import splu

    from .solver import assemble_linear_operator

    geom = MetricGeometry(g_jet if g_jet is not None else grid.jet(g), grid)
    shape = (3,) + grid.shape
    n = int(np.prod(shape))
    last = grid.nr_nodes - 1

    def op(x):
        X = x.reshape(shape)
        out = geom.delta_delta_star(grid.jet(X))
        out[:, 0] = X[:, 0]
        out[:, last] = X[:, last]
        return out.reshape(-1)

    A = assemble_linear_operator(grid, op, n_fields=3)
    rhs = np.array(W, dtype=float).reshape(shape).copy()
    rhs[:, 0] = 0.0
    rhs[:, last] = 0.0
    rhs = rhs.reshape(-1)
    if not np.any(rhs):
        return np.zeros(shape), 0.0
    x = splu(A.tocsc()).solve(rhs)
    res = np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs)
    if not np.isfinite(res) or res > 1e-8:
        raise RuntimeError(f"delta delta* solve did not converge: relative residual {res:.3e}")
    return x.reshape(shape), float(res)
