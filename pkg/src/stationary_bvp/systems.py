"""Field equations of stationary vacuum data on the exterior shell.

A stationary metric is carried by a triple on the orbit space: a Riemannian
metric ``g_S``, the log-norm ``u`` of the Killing field and a twist potential
``psi``. After the conformal change ``g = exp(2u) g_S`` the equations become
the "conformal system" whose residual is (E, F, H). Gauge terms turn it into an
elliptic operator; the same operator can be written directly in terms of
``g_S`` (the "projection form"). Boundary rows prescribe the induced metric,
the mean curvature and the normal derivative of ``psi`` on the inner sphere.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import (MetricGeometry, adm_mass, boundary_geometry, conformal_jet,
                       gauge_jet)
from .grid import Jet
from .tensors import check_positive_definite, flat_metric

GAUGES = ("bianchi", "divergence")


# ------------------------------------------------------------------ data


@dataclass
class FieldTriple:
    """Metric components ``g[i, j]``, scalar ``u`` and twist potential ``psi``.

    ``jets`` optionally supplies exact 2-jets (closed-form oracles, or jets
    obtained by the product rule from another triple). Without it the jets
    come from the finite-difference engine.
    """

    grid: object
    g: np.ndarray
    u: np.ndarray
    psi: np.ndarray
    jets: dict = field(default=None, repr=False)

    def __post_init__(self):
        shape = self.grid.shape
        self.g = np.asarray(self.g)
        self.u = np.broadcast_to(np.asarray(self.u), shape)
        self.psi = np.broadcast_to(np.asarray(self.psi), shape)
        self._cache = dict(self.jets or {})

    def jet(self, name):
        if name not in self._cache:
            self._cache[name] = self.grid.jet(getattr(self, name))
        return self._cache[name]

    def validate(self):
        check_positive_definite(np.real(self.g), self.grid)
        return self

    def fd_copy(self):
        """Same fields, finite-difference jets."""
        return type(self)(self.grid, self.g, self.u, self.psi)

    def perturbed(self, h=None, v=None, sigma=None, eps=1.0):
        g = self.g + eps * h if h is not None else self.g
        u = self.u + eps * v if v is not None else self.u
        psi = self.psi + eps * sigma if sigma is not None else self.psi
        return type(self)(self.grid, g, u, psi)


class ProjectionData(FieldTriple):
    """``(g_S, u, psi)``: orbit-space metric, lapse exponent, twist potential."""


class ConformalData(FieldTriple):
    """``(g, u, psi)`` with ``g = exp(2u) g_S``."""


@dataclass
class BoundaryData:
    """Prescribed data on the inner sphere.

    ``gamma`` holds the boundary metric on the flat unit frame
    (e_theta, e_phi) packed as (theta-theta, theta-phi, phi-phi); the round
    metric of the coordinate sphere is therefore (1, 0, 1). ``lam`` is the
    mean-curvature datum and ``f`` the Neumann datum for psi.
    """

    gamma: np.ndarray
    lam: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        g = np.real(self.gamma)
        if np.any(~(g[0] > 0)) or np.any(~(g[0] * g[2] - g[1] ** 2 > 0)):
            raise ValueError("boundary metric gamma is not positive definite")


@dataclass
class ResidualTriple:
    E: np.ndarray
    F: np.ndarray
    H: np.ndarray

    def sup_norms(self):
        return {"E": float(np.max(np.abs(self.E))), "F": float(np.max(np.abs(self.F))),
                "H": float(np.max(np.abs(self.H)))}


def conformal(data, direction="to_conformal"):
    """Rescale the metric by ``exp(+-2u)``; jets follow by the product rule."""
    if direction == "to_conformal":
        sign, cls = 1, ConformalData
    elif direction == "to_projection":
        sign, cls = -1, ProjectionData
    else:
        raise ValueError(f"unknown direction {direction!r}")
    ujet = data.jet("u")
    gjet = conformal_jet(data.jet("g"), ujet, sign)
    return cls(data.grid, gjet.val, data.u, data.psi,
               jets={"g": gjet, "u": ujet, "psi": data.jet("psi")})


# ----------------------------------------------------------------- twist


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


LEVI_CIVITA = _levi_civita()


def exterior_derivative(d1):
    """``(dX)_ij = d_i X_j - d_j X_i`` from the partials ``d1[i, j] = d_i X_j``."""
    return d1 - np.swapaxes(d1, 0, 1)


def hodge_two_form(geom, F):
    """``(*F)_k = 1/2 sqrt(det g) eps_ijk F^ij`` (orientation of x, y, z)."""
    Fup = np.einsum("ia...,jb...,ab...->ij...", geom.ginv, geom.ginv, F)
    return 0.5 * geom.sqrt_det * np.einsum("ijk,ij...->k...", LEVI_CIVITA, Fup)


def twist_form(grid, u, theta_form, g_S):
    """``omega = -1/2 exp(3u) *_{g_S} d theta`` and the sup-norm of ``d omega``."""
    geom = MetricGeometry(grid.jet(g_S), grid)
    F = exterior_derivative(grid.jet(theta_form).d1)
    omega = -0.5 * np.exp(3.0 * u) * hodge_two_form(geom, F)
    closed = float(np.max(np.abs(exterior_derivative(grid.jet(omega).d1))))
    return omega, closed


def _interval_integrals(f, h, order):
    """Integrals of f over each interval [x_i, x_{i+1}] of a uniform grid."""
    f = np.asarray(f)
    n = f.shape[0]
    if order == 2 or n < 4:
        return 0.5 * h * (f[:-1] + f[1:])
    out = np.empty((n - 1,) + f.shape[1:])
    out[1:-1] = h / 24.0 * (-f[:-3] + 13.0 * f[1:-2] + 13.0 * f[2:-1] - f[3:])
    out[0] = h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    out[-1] = h / 24.0 * (f[-4] - 5.0 * f[-3] + 19.0 * f[-2] + 9.0 * f[-1])
    return out


def _cumulative_from(f, h, order, base):
    """Antiderivative along axis 0 vanishing at index ``base``."""
    seg = _interval_integrals(f, h, order)
    cum = np.concatenate([np.zeros((1,) + seg.shape[1:]), np.cumsum(seg, axis=0)])
    return cum - cum[base]


class TwistClosureError(ValueError):
    def __init__(self, closure, tol):
        super().__init__(f"twist form is not closed: |d omega| = {closure:.3e} exceeds {tol:.3e}")
        self.closure = closure
        self.tol = tol


def closure_tolerance(grid, omega, factor=10.0):
    """Default closedness tolerance: ``factor`` times the measured truncation level.

    The truncation level of the discrete exterior derivative is estimated as
    the sup-difference between the order-p and order-(p+2) derivatives.
    """
    fine = exterior_derivative(grid.with_stencil_order(grid.stencil_order + 2).jet(omega).d1)
    coarse = exterior_derivative(grid.jet(omega).d1)
    return factor * float(np.max(np.abs(coarse - fine)))


def twist_potential(grid, omega, basepoint=None, tol=None, closure=None):
    """Potential psi with d psi = omega, by quadrature along grid polylines.

    The path runs radially along the meridian through the base point, then in
    theta at fixed r, then (full-3d) in phi at fixed (r, theta). ``basepoint``
    is an index triple; the default is the outer radius and the theta node
    nearest the equator. psi vanishes at the base point.
    """
    omega = np.asarray(omega)
    if closure is None:
        closure = float(np.max(np.abs(exterior_derivative(grid.jet(omega).d1))))
    tol = closure_tolerance(grid, omega) if tol is None else tol
    if closure > tol:
        raise TwistClosureError(closure, tol)
    if basepoint is None:
        basepoint = (grid.nr_nodes - 1, int(np.argmin(np.abs(grid.theta - np.pi / 2))), 0)
    ib, jb, kb = basepoint
    p = grid.stencil_order
    om_r = np.einsum("i...,i...->...", omega, grid.normal) * grid.r_xi[:, None, None]
    om_t = np.einsum("i...,i...->...", omega, grid.e_theta) * grid.R
    om_p = np.einsum("i...,i...->...", omega, grid.e_phi) * grid.R * np.sin(grid.TH)
    radial = _cumulative_from(om_r[:, jb, kb], grid.dxi, p, ib)
    polar = _cumulative_from(np.moveaxis(om_t[:, :, kb], 1, 0), grid.dtheta, p, jb).T
    psi = radial[:, None] + polar
    psi = np.repeat(psi[:, :, None], grid.n_phi, axis=2)
    if not grid.axisymmetric:
        az = np.moveaxis(_cumulative_from(np.moveaxis(om_p, 2, 0), grid.dphi, p, kb), 0, 2)
        psi = psi + az
    return psi


# ------------------------------------------------------------- residuals


def _outer(a, b):
    return np.einsum("i...,j...->ij...", a, b)


def residual_conformal_parts(geom, ujet, pjet):
    du, dp = ujet.d1, pjet.d1
    w = np.exp(-4.0 * ujet.val)
    return {
        "du2": geom.inner(du, du),
        "dp2": w * geom.inner(dp, dp),
        "dudp": geom.inner(du, dp),
        "lap_u": geom.laplacian(ujet),
        "lap_p": geom.laplacian(pjet),
        "w": w,
    }


def residual_II_from_jets(geom, ujet, pjet):
    q = residual_conformal_parts(geom, ujet, pjet)
    du, dp, w = ujet.d1, pjet.d1, q["w"]
    scal = 0.5 * (geom.s - 2.0 * q["du2"] - 2.0 * q["dp2"])
    E = scal * geom.g - geom.ric + 2.0 * _outer(du, du) + 2.0 * w * _outer(dp, dp)
    F = -4.0 * q["lap_u"] + 8.0 * q["dp2"]
    H = -4.0 * w * (q["lap_p"] + 4.0 * q["dudp"])
    return ResidualTriple(E, F, H)


def residual_II(c):
    """(E, F, H) of conformal data; E is the metric variation of the action."""
    geom = MetricGeometry(c.jet("g"), c.grid)
    return residual_II_from_jets(geom, c.jet("u"), c.jet("psi"))


def reference_geometry(grid, g_ref):
    """MetricGeometry of a reference metric given as components, a Jet or a geometry."""
    if isinstance(g_ref, MetricGeometry):
        return g_ref
    if isinstance(g_ref, Jet):
        return MetricGeometry(g_ref, grid)
    if g_ref is None:
        g_ref = flat_metric(grid.shape)
    return MetricGeometry(grid.jet(g_ref), grid)


def gauge_value(grid, g, g_ref=None, kind="divergence"):
    """Gauge 1-form G1 (bianchi) or G2 (divergence) of ``g`` against ``g_ref``."""
    gjet = g if isinstance(g, Jet) else grid.jet(g)
    return gauge_jet(gjet, reference_geometry(grid, g_ref), kind)[0]


def interior_operator_from_jets(geom, ujet, pjet, ref, kind="divergence", gjet=None):
    """The gauged interior operator on conformal data as a triple."""
    gjet = gjet or geom.jet
    q = residual_conformal_parts(geom, ujet, pjet)
    du, dp, w = ujet.d1, pjet.d1, q["w"]
    G, dG = gauge_jet(gjet, ref, kind)
    gauge_term = geom.delta_star(G, dG)
    first = geom.ric - 2.0 * _outer(du, du) - 2.0 * w * _outer(dp, dp) + gauge_term
    if kind == "divergence":
        first = first - 0.5 * (geom.s - 2.0 * q["du2"] - 2.0 * q["dp2"]) * geom.g
    L1 = 2.0 * first
    L2 = 8.0 * (q["lap_u"] - 2.0 * q["dp2"])
    L3 = 8.0 * w * (q["lap_p"] + 4.0 * q["dudp"])
    return ResidualTriple(L1, L2, L3)


def residual_III(c, g_ref=None, kind="divergence"):
    """Gauged operator {2(Ric - 2du du - 2e^-4u dpsi dpsi + delta* G + T), 8(...), 8e^-4u(...)}.

    ``kind="bianchi"`` uses G1 with T1 = 0; ``kind="divergence"`` uses G2 with
    T2 = -1/2 (s - 2|du|^2 - 2e^-4u|dpsi|^2) g evaluated on the current data.
    """
    if kind not in GAUGES:
        raise ValueError(f"unknown gauge kind {kind!r}")
    geom = MetricGeometry(c.jet("g"), c.grid)
    ref = reference_geometry(c.grid, g_ref)
    return interior_operator_from_jets(geom, c.jet("u"), c.jet("psi"), ref, kind)


def residual_projection(p, g_ref_S=None):
    """Gauged interior operator written directly in terms of (g_S, u, psi).

    The gauge 1-form is the divergence gauge of the rescaled metrics,
    ``delta_{exp(2u) g_ref_S}(exp(2u) g_S)``, and its symmetrised derivative is
    taken with respect to ``exp(2u) g_S``.
    """
    grid = p.grid
    geom = MetricGeometry(p.jet("g"), grid)
    ujet, pjet = p.jet("u"), p.jet("psi")
    du, dp = ujet.d1, pjet.d1
    if g_ref_S is None:
        g_ref_S = flat_metric(grid.shape)
    ref_jet = g_ref_S if isinstance(g_ref_S, Jet) else grid.jet(g_ref_S)
    ref_c = MetricGeometry(conformal_jet(ref_jet, ujet), grid)
    G, dG = gauge_jet(conformal_jet(p.jet("g"), ujet), ref_c, "divergence")
    # Christoffel symbols of exp(2u) g_S from those of g_S
    eye = np.eye(3).reshape((3, 3) + (1,) * len(grid.shape))
    up = geom.raise_index(du)
    gam_c = (geom.gam + np.einsum("ki...,j...->kij...", eye, du)
             + np.einsum("kj...,i...->kij...", eye, du) - np.einsum("ij...,k...->kij...", geom.g, up))
    gauge_term = 0.5 * (dG + np.swapaxes(dG, 0, 1)) - np.einsum("kij...,k...->ij...", gam_c, G)
    w = np.exp(-4.0 * ujet.val)
    du2 = geom.inner(du, du)
    dp2 = geom.inner(dp, dp)
    lap_u = geom.laplacian(ujet)
    lap_p = geom.laplacian(pjet)
    hess_u = geom.hessian(ujet)
    scalar_eq = lap_u - du2 - 2.0 * w * dp2
    T_S = -0.5 * (geom.s + 4.0 * lap_u - 4.0 * du2 - 2.0 * w * dp2) * geom.g
    first = (geom.ric - hess_u - _outer(du, du) - 2.0 * w * (_outer(dp, dp) - dp2 * geom.g)
             + scalar_eq * geom.g + T_S + gauge_term)
    L1 = 2.0 * first
    L2 = 8.0 * np.exp(-2.0 * ujet.val) * scalar_eq
    L3 = 8.0 * np.exp(-6.0 * ujet.val) * (lap_p + 3.0 * geom.inner(du, dp))
    return ResidualTriple(L1, L2, L3)


# -------------------------------------------------------------- boundary


BOUNDARY_ROWS = ("gauge", "metric", "mean_curvature", "neumann")


def boundary_rows_from_jets(grid, gjet, ujet, pjet, bd, ref, kind="divergence", row=0):
    """Boundary operator rows at r = r_min as a dict of arrays.

    ``gauge``: Cartesian components of G (3); ``gauge_split``: (G(nu),
    G(e_theta), G(e_phi)); ``metric``: exp(-2u) g^T - gamma (3);
    ``mean_curvature``: H - 2 nu(u) - exp(-u) lam; ``neumann``:
    nu(psi) - exp(-u) f.
    """
    b = boundary_geometry(grid, gjet, row=row)
    G = gauge_jet(gjet.boundary(row), _BoundaryRef(ref, row), kind)[0]
    ub, pb = ujet.boundary(row), pjet.boundary(row)
    eu = np.exp(-ub.val)
    nu_u = b.normal_derivative(ub.d1)
    nu_p = b.normal_derivative(pb.d1)
    split = np.array([np.einsum("i...,i...->...", G, b.nu),
                      np.einsum("i...,i...->...", G, grid.e_theta[:, row]),
                      np.einsum("i...,i...->...", G, grid.e_phi[:, row])])
    return {
        "gauge": G,
        "gauge_split": split,
        "metric": eu**2 * b.gT - bd.gamma,
        "mean_curvature": b.H - 2.0 * nu_u - eu * bd.lam,
        "neumann": nu_p - eu * bd.f,
        "slice": b,
    }


class _BoundaryRef:
    """Reference geometry restricted to one radial node row."""

    def __init__(self, ref, row=0):
        def cut(a, lead):
            return a[(slice(None),) * lead + (row,)]

        self._row = row
        self.g = cut(ref.g, 2)
        self.ginv = cut(ref.ginv, 2)
        self.dinv = cut(ref.dinv, 3)
        self.gam = cut(ref.gam, 3)
        self.dgam = cut(ref.dgam, 4)
        self._ref = ref

    @property
    def ddinv(self):
        return self._ref.ddinv[(slice(None),) * 4 + (self._row,)]

    def cov_sym(self, h, dh):
        return MetricGeometry.cov_sym(self, h, dh)


def _boundary_ref(ref):
    return _BoundaryRef(ref)


def boundary_residual(c, bd, g_ref=None, kind="divergence"):
    """Boundary operator of the conformal system against BoundaryData ``bd``."""
    ref = reference_geometry(c.grid, g_ref)
    return boundary_rows_from_jets(c.grid, c.jet("g"), c.jet("u"), c.jet("psi"), bd, ref, kind)


def boundary_residual_projection(p, bd, g_ref_S=None):
    """Boundary rows written in terms of (g_S, u, psi).

    Rows: pulled-back divergence gauge, g_S^T - gamma, H_{g_S} - lam,
    nu_{g_S}(psi) - f.
    """
    grid = p.grid
    ujet = p.jet("u")
    if g_ref_S is None:
        g_ref_S = flat_metric(grid.shape)
    ref_jet = g_ref_S if isinstance(g_ref_S, Jet) else grid.jet(g_ref_S)
    ref_c = _boundary_ref(MetricGeometry(conformal_jet(ref_jet, ujet), grid))
    G = gauge_jet(conformal_jet(p.jet("g"), ujet).boundary(), ref_c, "divergence")[0]
    b = boundary_geometry(grid, p.jet("g"))
    return {
        "gauge": G,
        "metric": b.gT - bd.gamma,
        "mean_curvature": b.H - bd.lam,
        "neumann": b.normal_derivative(p.jet("psi").boundary().d1) - bd.f,
    }


def boundary_map_Pi(p):
    """(g_S^T, H_{g_S}, nu_{g_S}(psi)) on the inner sphere.

    Uses the jets attached to ``p`` (closed forms for oracles) when present.
    """
    b = boundary_geometry(p.grid, p.jet("g"))
    f = b.normal_derivative(p.jet("psi").boundary().d1)
    return BoundaryData(b.gT, b.H, f)


# ---------------------------------------------------------------- action


def boundary_area_weights(grid, bslice):
    """Induced area element of the inner sphere times the angular quadrature."""
    gT = bslice.gT
    return np.sqrt(gT[0] * gT[2] - gT[1] ** 2) * grid.sphere_weights(0)


def action_I(c, r_extract=None):
    """Reduced action of conformal data on the truncated shell.

    I = int (s - 2|du|^2 - 2e^-4u |dpsi|^2) dvol_g - 2 oint H dA - 16 pi m_ADM.
    The mean curvature is taken with the normal pointing to infinity; the ADM
    mass is extracted at r_max/2.
    """
    grid = c.grid
    gjet = c.jet("g")
    geom = MetricGeometry(gjet, grid)
    q = residual_conformal_parts(geom, c.jet("u"), c.jet("psi"))
    dens = geom.s - 2.0 * q["du2"] - 2.0 * q["dp2"]
    bulk = np.sum(dens * geom.volume_form(grid))
    b = boundary_geometry(grid, gjet)
    surface = np.sum(b.H * boundary_area_weights(grid, b))
    mass = adm_mass(grid, gjet, r_extract)
    return bulk - 2.0 * surface - 16.0 * np.pi * mass


def volume_pairing(geom, grid, res, h, v, sigma):
    """int <(E, F, H), (h, v, sigma)> dvol_g with the metric pairing on E."""
    dens = geom.inner_sym(res.E, h) + res.F * v + res.H * sigma
    return np.sum(dens * geom.volume_form(grid))


def boundary_variation_terms(c, h, v, sigma):
    """Boundary integrand pieces of the first variation on the inner sphere.

    Returns (metric part <A, h> - H tr h^T, scalar part
    4 nu(u) v + 4 e^-4u nu(psi) sigma, area weights).
    """
    grid = c.grid
    gjet = c.jet("g")
    b = boundary_geometry(grid, gjet)
    hb = h[..., 0, :, :]
    ginv = b.ginv
    a_h = np.einsum("ia...,jb...,ij...,ab...->...", ginv, ginv, b.A, hb)
    tr_t = np.einsum("ij...,ij...->...", ginv, hb) - np.einsum("ij...,i...,j...->...", hb, b.nu, b.nu)
    metric_part = a_h - b.H * tr_t
    ub, pb = c.jet("u").boundary(), c.jet("psi").boundary()
    scalar_part = (4.0 * b.normal_derivative(ub.d1) * v[0]
                   + 4.0 * np.exp(-4.0 * ub.val) * b.normal_derivative(pb.d1) * sigma[0])
    return metric_part, scalar_part, boundary_area_weights(grid, b), b


def first_variation(c, h, v, sigma):
    """Analytic first variation: volume pairing with (E, F, H) plus boundary terms."""
    geom = MetricGeometry(c.jet("g"), c.grid)
    res = residual_II_from_jets(geom, c.jet("u"), c.jet("psi"))
    vol = volume_pairing(geom, c.grid, res, h, v, sigma)
    metric_part, scalar_part, w, _ = boundary_variation_terms(c, h, v, sigma)
    return vol + np.sum((metric_part + scalar_part) * w)


def first_variation_check(c, h, v, sigma, step=1e-4):
    """|analytic variation - centred difference of action_I| along (h, v, sigma)."""
    base = c.fd_copy()
    plus = action_I(base.perturbed(h, v, sigma, step))
    minus = action_I(base.perturbed(h, v, sigma, -step))
    fd = (plus - minus) / (2.0 * step)
    analytic = first_variation(base, h, v, sigma)
    return {"fd": float(fd), "analytic": float(analytic), "defect": float(abs(fd - analytic))}


def reduced_boundary_variation(c, v):
    """Boundary metric term for directions with h^T = 2 v g^T: -2 v H."""
    b = boundary_geometry(c.grid, c.jet("g"))
    return np.sum(-2.0 * v[0] * b.H * boundary_area_weights(c.grid, b))

