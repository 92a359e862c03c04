"""Discrete Riemannian geometry evaluated from 2-jets.

Every quantity here is a pointwise algebraic function of the value, first and
second Cartesian partials of the metric (and of the other fields involved).
The partials come from the finite-difference jet engine or from closed
forms; the algebra does not care which. Arrays carry tensor indices first and
any number of node axes last, so the same code serves the whole grid and the
inner boundary sphere.
"""

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from ._accel import christoffel_ricci
from .grid import Jet
from .tensors import check_positive_definite, det3, inv3

EYE = np.eye(3)


def _eye(nodes):
    return EYE.reshape((3, 3) + (1,) * len(nodes))


def inverse_derivative(ginv, dg):
    """``d_m g^{kl} = -g^{ka} d_m g_ab g^{bl}``."""
    return -np.einsum("ka...,mab...,bl...->mkl...", ginv, dg, ginv, optimize=True)


def lowered_christoffel(dg):
    """``low[l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)``."""
    return 0.5 * (np.einsum("ijl...->lij...", dg) + np.einsum("jil...->lij...", dg) - dg)


class MetricGeometry:
    """Inverse, Christoffel symbols, Ricci and scalar curvature of a metric jet."""

    def __init__(self, gjet, grid=None, check=True):
        self.jet = gjet
        self.grid = grid
        g = gjet.val
        self.nodes = g.shape[2:]
        if check:
            check_positive_definite(g, grid)
        self.g = g
        self.dg = gjet.d1
        self.ddg = gjet.d2
        self.ginv = inv3(g)
        n = int(np.prod(self.nodes))
        gam, dgam, ric = christoffel_ricci(
            self.ginv.reshape(3, 3, n), self.dg.reshape(3, 3, 3, n), self.ddg.reshape(3, 3, 3, 3, n))
        self.gam = gam.reshape((3, 3, 3) + self.nodes)
        self.dgam = dgam.reshape((3, 3, 3, 3) + self.nodes)
        self.ric = ric.reshape((3, 3) + self.nodes)
        self.s = np.einsum("ij...,ij...->...", self.ginv, self.ric)
        self.dinv = inverse_derivative(self.ginv, self.dg)
        self.sqrt_det = np.sqrt(det3(g))
        self._ddinv = None

    @property
    def ddinv(self):
        """``d_m d_j g^{kl}``."""
        if self._ddinv is None:
            gi, dgi, dg, ddg = self.ginv, self.dinv, self.dg, self.ddg
            self._ddinv = -(np.einsum("mka...,jab...,bl...->mjkl...", dgi, dg, gi, optimize=True)
                            + np.einsum("ka...,mjab...,bl...->mjkl...", gi, ddg, gi, optimize=True)
                            + np.einsum("ka...,jab...,mbl...->mjkl...", gi, dg, dgi, optimize=True))
        return self._ddinv

    # -------------------------------------------------------------- algebra
    def inner(self, a, b):
        return np.einsum("ij...,i...,j...->...", self.ginv, a, b, optimize=True)

    def raise_index(self, a):
        return np.einsum("ij...,j...->i...", self.ginv, a)

    def trace(self, h):
        return np.einsum("ij...,ij...->...", self.ginv, h)

    def inner_sym(self, a, b):
        return np.einsum("ia...,jb...,ij...,ab...->...", self.ginv, self.ginv, a, b, optimize=True)

    # ----------------------------------------------------------- operators
    def hessian(self, fjet):
        return fjet.d2 - np.einsum("kij...,k...->ij...", self.gam, fjet.d1)

    def laplacian(self, fjet):
        """Geometric Laplacian ``-tr D^2 f`` (non-negative spectrum)."""
        return -self.trace(self.hessian(fjet))

    def cov_sym(self, h, dh):
        """``nabla_k h_ij`` from the value and partials of a covariant 2-tensor."""
        return (dh - np.einsum("lki...,lj...->kij...", self.gam, h)
                - np.einsum("lkj...,il...->kij...", self.gam, h))

    def div_sym(self, h, dh):
        """``(delta h)_j = -g^{ik} nabla_k h_ij``."""
        return -np.einsum("ik...,kij...->j...", self.ginv, self.cov_sym(h, dh))

    def div_form(self, x, dx):
        """``delta X = -g^{ij} nabla_i X_j``."""
        return -self.trace(dx - np.einsum("kij...,k...->ij...", self.gam, x))

    def delta_star(self, x, dx):
        """``1/2 (nabla_i X_j + nabla_j X_i)``; ``dx[i, j] = d_i X_j``."""
        return 0.5 * (dx + np.swapaxes(dx, 0, 1)) - np.einsum("kij...,k...->ij...", self.gam, x)

    def delta_star_jet(self, xjet):
        """Value and partials of ``delta* X`` from a 2-jet of the 1-form X."""
        x, dx, ddx = xjet.val, xjet.d1, xjet.d2
        s = self.delta_star(x, dx)
        ds = (0.5 * (ddx + np.swapaxes(ddx, 1, 2))
              - np.einsum("mkij...,k...->mij...", self.dgam, x)
              - np.einsum("kij...,mk...->mij...", self.gam, dx))
        return s, ds

    def delta_delta_star(self, xjet):
        s, ds = self.delta_star_jet(xjet)
        return self.div_sym(s, ds)

    def volume_form(self, grid):
        return self.sqrt_det * grid.volume_weights()


def scalar_jet_product(a, b):
    """2-jet of the product of two scalar jets."""
    val = a.val * b.val
    d1 = a.d1 * b.val + a.val * b.d1
    d2 = (a.d2 * b.val + a.val * b.d2 + np.einsum("i...,j...->ij...", a.d1, b.d1)
          + np.einsum("j...,i...->ij...", a.d1, b.d1))
    return Jet(val, d1, d2)


def exp_jet(fjet, c):
    """2-jet of ``exp(c f)``."""
    w = np.exp(c * fjet.val)
    d1 = c * w * fjet.d1
    d2 = w * (c * c * np.einsum("i...,j...->ij...", fjet.d1, fjet.d1) + c * fjet.d2)
    return Jet(w, d1, d2)


def scale_tensor_jet(wjet, tjet):
    """2-jet of ``w T`` for a scalar jet w and a 2-tensor jet T."""
    w, w1, w2 = wjet.val, wjet.d1, wjet.d2
    t, t1, t2 = tjet.val, tjet.d1, tjet.d2
    val = w * t
    d1 = np.einsum("m...,ij...->mij...", w1, t) + w * t1
    d2 = (np.einsum("mn...,ij...->mnij...", w2, t) + np.einsum("m...,nij...->mnij...", w1, t1)
          + np.einsum("n...,mij...->mnij...", w1, t1) + w * t2)
    return Jet(val, d1, d2)


def conformal_jet(gjet, ujet, sign=1):
    """2-jet of ``exp(2 sign u) g`` by the exact product rule."""
    return scale_tensor_jet(exp_jet(ujet, 2.0 * sign), gjet)


# ------------------------------------------------------------------ gauges


def gauge_jet(gjet, ref, kind):
    """Gauge 1-form and its partials.

    ``divergence``: G2 = delta_ref g. ``bianchi``: G1 = G2 + 1/2 d tr_ref g.
    Returns ``(G[j], dG[m, j])``.
    """
    g, dg, ddg = gjet.val, gjet.d1, gjet.d2
    gam, dgam = ref.gam, ref.dgam
    cov = ref.cov_sym(g, dg)
    dcov = (ddg
            - np.einsum("mlki...,lj...->mkij...", dgam, g) - np.einsum("lki...,mlj...->mkij...", gam, dg)
            - np.einsum("mlkj...,il...->mkij...", dgam, g) - np.einsum("lkj...,mil...->mkij...", gam, dg))
    G = -np.einsum("ik...,kij...->j...", ref.ginv, cov)
    dG = (-np.einsum("mik...,kij...->mj...", ref.dinv, cov)
          - np.einsum("ik...,mkij...->mj...", ref.ginv, dcov))
    if kind == "divergence":
        return G, dG
    if kind != "bianchi":
        raise ValueError(f"unknown gauge kind {kind!r}")
    dtr = np.einsum("jab...,ab...->j...", ref.dinv, g) + np.einsum("ab...,jab...->j...", ref.ginv, dg)
    ddtr = (np.einsum("mjab...,ab...->mj...", ref.ddinv, g)
            + np.einsum("jab...,mab...->mj...", ref.dinv, dg)
            + np.einsum("mab...,jab...->mj...", ref.dinv, dg)
            + np.einsum("ab...,mjab...->mj...", ref.ginv, ddg))
    return G + 0.5 * dtr, dG + 0.5 * ddtr


# --------------------------------------------------------- boundary sphere


@dataclass
class BoundarySlice:
    """Extrinsic geometry of the inner sphere r = r_min.

    ``nu`` is the g-unit normal pointing towards increasing r, ``nu_flat`` its
    lowered form. ``A`` is the second fundamental form as a covariant 3-tensor
    annihilating ``nu``; ``H = tr_g A``. ``gT`` and ``A_frame`` are components
    on the flat unit tangent frame (e_theta, e_phi), packed as
    (theta-theta, theta-phi, phi-phi).
    """

    radius: float
    nu: np.ndarray
    nu_flat: np.ndarray
    A: np.ndarray
    H: np.ndarray
    gT: np.ndarray
    A_frame: np.ndarray
    ginv: np.ndarray
    gam: np.ndarray
    dnu: np.ndarray
    dinv: np.ndarray
    g: np.ndarray
    dg: np.ndarray

    def normal_derivative(self, fjet_boundary_d1):
        return np.einsum("i...,i...->...", self.nu, fjet_boundary_d1)


def frame_components(T, e1, e2):
    """Pack T(e_a, e_b) for the tangent frame (e1, e2)."""
    def ev(a, b):
        return np.einsum("ij...,i...,j...->...", T, a, b, optimize=True)

    return np.array([ev(e1, e1), ev(e1, e2), ev(e2, e2)])


def boundary_geometry(grid, gjet, check=True, row=0):
    """Unit normal, second fundamental form and mean curvature at r = r_min.

    ``row`` selects another radial node sphere (``-1``: the outer sphere); the
    normal always points towards increasing r.
    """
    gb = gjet.boundary(row)
    g, dg = gb.val, gb.d1
    nodes = g.shape[2:]
    if check:
        check_positive_definite(g, what="metric on the boundary sphere")
    ginv = inv3(g)
    dinv = inverse_derivative(ginv, dg)
    gam = np.einsum("kl...,lij...->kij...", ginv, lowered_christoffel(dg))
    R = grid.r[row]
    n = grid.normal[:, row]
    dn = (_eye(nodes) - np.einsum("i...,j...->ij...", n, n)) / R
    N = np.einsum("kj...,j...->k...", ginv, n)
    q = np.einsum("k...,k...->...", n, N)
    sq = np.sqrt(q)
    dN = np.einsum("ikj...,j...->ik...", dinv, n) + np.einsum("kj...,ij...->ik...", ginv, dn)
    dq = 2.0 * np.einsum("b...,ib...->i...", N, dn) + np.einsum("a...,iab...,b...->i...", n, dinv, n, optimize=True)
    nu = N / sq
    nu_flat = n / sq
    dnu = dN / sq - 0.5 * np.einsum("k...,i...->ik...", N, dq) / (q * sq)
    cov_nu = dnu + np.einsum("kil...,l...->ik...", gam, nu)
    cov_nu_flat = np.einsum("jk...,ik...->ij...", g, cov_nu)
    P = _eye(nodes) - np.einsum("a...,i...->ai...", nu, nu_flat)
    A = np.einsum("ai...,bj...,ab...->ij...", P, P, cov_nu_flat, optimize=True)
    A = 0.5 * (A + np.swapaxes(A, 0, 1))
    H = np.einsum("ij...,ij...->...", ginv, A)
    e1, e2 = grid.e_theta[:, row], grid.e_phi[:, row]
    gT = frame_components(g, e1, e2)
    if check:
        det = np.real(gT[0] * gT[2] - gT[1] ** 2)
        if np.any(~(np.real(gT[0]) > 0)) or np.any(~(det > 0)):
            raise ValueError("degenerate induced metric on the boundary sphere")
    return BoundarySlice(R, nu, nu_flat, A, H, gT, frame_components(A, e1, e2), ginv, gam,
                         dnu, dinv, g, dg)


def cone_extension(grid, gT):
    """Metric n n + gamma_ab E^a E^b on the shell, gamma constant along rays.

    Restricted to r = r_min its scalar curvature is that of gamma minus 2/R^2.
    """
    e1, e2, n = grid.e_theta, grid.e_phi, grid.normal
    gam = np.broadcast_to(gT[:, None], (3,) + grid.shape)

    def outer(a, b):
        return np.einsum("i...,j...->ij...", a, b)

    return (outer(n, n) + gam[0] * outer(e1, e1) + gam[1] * (outer(e1, e2) + outer(e2, e1))
            + gam[2] * outer(e2, e2))


def boundary_scalar_curvature(grid, gT):
    """Scalar curvature of the boundary metric given by frame components ``gT``."""
    geom = MetricGeometry(grid.jet(cone_extension(grid, gT)), grid)
    return geom.s[0] + 2.0 / grid.r_min**2


def gauss_residual(grid, gjet, geom=None, bslice=None):
    """``|A|^2 - H^2 + s_{g^T} - (s_g - 2 Ric(nu, nu))`` at the boundary nodes."""
    geom = geom or MetricGeometry(gjet, grid)
    b = bslice or boundary_geometry(grid, gjet)
    ginv = b.ginv
    a2 = np.einsum("ia...,jb...,ij...,ab...->...", ginv, ginv, b.A, b.A, optimize=True)
    ric_nn = np.einsum("ij...,i...,j...->...", geom.ric[:, :, 0], b.nu, b.nu, optimize=True)
    s_t = boundary_scalar_curvature(grid, b.gT)
    return a2 - b.H**2 + s_t - (geom.s[0] - 2.0 * ric_nn)


# -------------------------------------------------- coordinate-frame views


def _second_embedding(grid):
    """``d^2 x^k / dy^a dy^b`` for y = (r, theta, phi)."""
    R, TH, PH = grid.R, grid.TH, grid.PH
    st, ct = np.sin(TH), np.cos(TH)
    xx = np.zeros((3, 3, 3) + grid.shape)
    radial_cyl = np.array([np.cos(PH), np.sin(PH), 0.0 * PH])
    xx[0, 1] = xx[1, 0] = grid.e_theta
    xx[0, 2] = xx[2, 0] = st * grid.e_phi
    xx[1, 1] = -R * grid.normal
    xx[1, 2] = xx[2, 1] = R * ct * grid.e_phi
    xx[2, 2] = -R * st * radial_cyl
    return np.moveaxis(xx, 2, 0)  # [k, a, b]


def christoffel_coordinate_frame(grid, gam):
    """Christoffel symbols of the (r, theta, phi) coordinate frame."""
    J, E = grid.J, grid.E
    out = np.einsum("ck...,ai...,bj...,kij...->cab...", J, E, E, gam, optimize=True)
    return out + np.einsum("ck...,kab...->cab...", J, _second_embedding(grid))


# --------------------------------------------------- norms and ADM mass


def weighted_norm(grid, values, k=0, delta=0.5):
    """Truncated ``C^k_delta`` norm: sum over j <= k of sup r^(j+delta) |d^j v|."""
    if k not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    values = np.asarray(values)
    rank = values.ndim - 3
    axes = tuple(range(rank))
    w = grid.R**delta
    total = np.max(w * np.sqrt(np.sum(np.abs(values) ** 2, axis=axes)))
    if k >= 1:
        jet = grid.jet(values)
        total += np.max(grid.R * w * np.sqrt(np.sum(np.abs(jet.d1) ** 2, axis=(0,) + tuple(a + 1 for a in axes))))
        if k == 2:
            total += np.max(grid.R**2 * w * np.sqrt(np.sum(np.abs(jet.d2) ** 2, axis=(0, 1) + tuple(a + 2 for a in axes))))
    return float(total)


def adm_flux(grid, gjet):
    """Mass flux ``1/16pi oint (d_j g_ij - d_i g_jj) n^i dS`` on every radial shell."""
    dg = gjet.d1
    vec = np.einsum("jij...->i...", dg) - np.einsum("ijj...->i...", dg)
    integrand = np.einsum("i...,i...->...", vec, grid.normal)
    w = grid.R**2 * grid.polar_weights[None, :, None] * grid.phi_weight()
    return np.real(np.sum(w * integrand, axis=(1, 2))) / (16.0 * np.pi)


def adm_mass(grid, gjet, r_extract=None):
    """Flux mass at ``r_extract`` Richardson-corrected with the flux at ``r_extract/2``.

    Assumes the flux behaves as m + c/r between the two radii.
    """
    r_extract = grid.r_max / 2.0 if r_extract is None else float(r_extract)
    r_inner = r_extract / 2.0
    if r_extract > grid.r_max * (1 + 1e-12) or r_inner < grid.r_min * (1 - 1e-12):
        raise ValueError(
            f"extraction radii [{r_inner}, {r_extract}] outside grid [{grid.r_min}, {grid.r_max}]")
    flux = CubicSpline(np.log(grid.r), adm_flux(grid, gjet))
    m2, m1 = float(flux(np.log(r_extract))), float(flux(np.log(r_inner)))
    return (r_extract * m2 - r_inner * m1) / (r_extract - r_inner)
