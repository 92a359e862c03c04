"""Exterior spherical-shell grid and the finite-difference jet engine.

Nodes are vertex-centred in r (so the inner sphere r = r_min is a node row)
and cell-centred in theta (no node on the axis). Tensor fields are stored by
their components in the asymptotically Cartesian frame dx, dy, dz; those
components are smooth functions on the shell, which keeps the stencils
consistent up to the axis.

In axisymmetric mode only the phi = 0 half-plane is stored. Azimuthal
derivatives are then exact: rotating a field about the z axis acts on its
Cartesian indices, so d/dphi becomes the algebraic action of the rotation
generator. Across the poles a component with an odd number of x/y indices
changes sign; such components are differenced after division by sin(theta),
which keeps the truncation error regular at the axis.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np

from ._accel import gather_stencil

AXI = "axisymmetric-2d"
FULL = "full-3d"
_MODE_ALIASES = {"axi": AXI, AXI: AXI, "3d": FULL, FULL: FULL}

# generator of rotations about z, acting on Cartesian components
OMEGA = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


class GridError(ValueError):
    pass


def fd_weights(offsets, deriv):
    """Weights of the finite-difference formula for ``deriv`` on integer offsets."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    vander = np.array([offsets**q for q in range(n)])
    rhs = np.zeros(n)
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(vander, rhs)


@dataclass(frozen=True)
class Stencil:
    """Gathered stencil: ``out[i] = sum_k coef[i, k] * f[idx[i, k]]``."""

    idx: np.ndarray
    coef: np.ndarray

    @cached_property
    def zero_sum(self):
        return bool(np.all(np.abs(self.coef.sum(axis=1)) <= 1e-9 * np.abs(self.coef).sum(axis=1)))

    def apply(self, arr2d):
        return gather_stencil(self.idx, self.coef, arr2d, self.zero_sum)

    def matrix(self, n_in):
        mat = np.zeros((self.idx.shape[0], n_in))
        for i in range(self.idx.shape[0]):
            for k in range(self.idx.shape[1]):
                mat[i, self.idx[i, k]] += self.coef[i, k]
        return mat


def _pack(rows):
    width = max(len(r) for r in rows)
    idx = np.zeros((len(rows), width), dtype=np.int64)
    coef = np.zeros((len(rows), width))
    for i, row in enumerate(rows):
        for k, (j, c) in enumerate(row):
            idx[i, k] = j
            coef[i, k] = c
    return Stencil(idx, coef)


def bounded_stencil(n, deriv, order, spacing):
    """Centred stencil with one-sided closures of the same order at both ends."""
    half = order // 2
    n_side = order + deriv
    if n < n_side:
        raise GridError(f"need at least {n_side} points for order-{order} stencils, got {n}")
    rows = []
    for i in range(n):
        if i - half >= 0 and i + half <= n - 1:
            offs = np.arange(-half, half + 1)
        else:
            start = 0 if i - half < 0 else n - n_side
            offs = np.arange(start, start + n_side) - i
        w = fd_weights(offs, deriv) / spacing**deriv
        rows.append([(i + o, c) for o, c in zip(offs, w)])
    return _pack(rows)


def _fold(j, n):
    """Reflect an out-of-range cell-centred index across theta = 0 or pi."""
    if j < 0:
        return -j - 1, True
    if j >= n:
        return 2 * n - j - 1, True
    return j, False


def polar_stencil(n_theta, deriv, order, spacing, parity):
    """Centred theta stencil whose ghost values across a pole are ``parity`` times
    the mirrored interior node (the node on the opposite meridian)."""
    half = order // 2
    offs = np.arange(-half, half + 1)
    w = fd_weights(offs, deriv) / spacing**deriv
    rows = []
    for j in range(n_theta):
        row = []
        for o, c in zip(offs, w):
            jj, crossed = _fold(j + o, n_theta)
            row.append((jj, c * (parity if crossed else 1.0)))
        rows.append(row)
    return _pack(rows)


def _scaled(st, left=None, right=None):
    """Stencil of diag(left) @ S @ diag(right)."""
    coef = st.coef.copy()
    if right is not None:
        coef = coef * right[st.idx]
    if left is not None:
        coef = coef * left[:, None]
    return Stencil(st.idx, coef)


def _combine(*pairs):
    """Sum of stencils (all with the same number of output rows)."""
    rows = [dict() for _ in range(pairs[0].idx.shape[0])]
    for st in pairs:
        for i in range(st.idx.shape[0]):
            for j, c in zip(st.idx[i], st.coef[i]):
                if c != 0.0:
                    rows[i][int(j)] = rows[i].get(int(j), 0.0) + c
    return _pack([sorted(r.items()) for r in rows])


def _identity(n, scale=None):
    scale = np.ones(n) if scale is None else scale
    return _pack([[(i, scale[i])] for i in range(n)])


@dataclass
class Jet:
    """Value, first and second Cartesian partials of a tensor field.

    ``d1[i, ...] = d_i T`` and ``d2[i, j, ...] = d_i d_j T``; the trailing axes
    are the tensor indices followed by the grid (or node) axes.
    """

    val: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    def __add__(self, other):
        return Jet(self.val + other.val, self.d1 + other.d1, self.d2 + other.d2)

    def scale(self, c):
        return Jet(c * self.val, c * self.d1, c * self.d2)

    def boundary(self, row=0):
        """Restriction to one radial node row (default: the inner sphere)."""
        return Jet(self.val[..., row, :, :], self.d1[..., row, :, :], self.d2[..., row, :, :])

    def astype(self, dtype):
        return Jet(self.val.astype(dtype), self.d1.astype(dtype), self.d2.astype(dtype))


class Grid:
    """Truncated exterior shell r_min <= r <= r_max with theta/phi sampling."""

    def __init__(self, n_r, n_theta, n_phi=1, r_min=1.0, r_max=8.0, mode=AXI,
                 stencil_order=2, radial_map="log"):
        if mode not in _MODE_ALIASES:
            raise GridError(f"unknown grid mode {mode!r}")
        mode = _MODE_ALIASES[mode]
        if r_min < 1.0:
            raise GridError(f"r_min must be >= 1, got {r_min}")
        if r_max < 8.0 * r_min:
            raise GridError(f"r_max must be >= 8*r_min, got r_min={r_min}, r_max={r_max}")
        if stencil_order not in (2, 4):
            raise GridError("stencil order must be 2 or 4")
        if mode == AXI and n_phi != 1:
            raise GridError("axisymmetric mode requires n_phi = 1")
        if mode == FULL and (n_phi < 4 or n_phi % 2):
            raise GridError("full-3d mode requires an even n_phi >= 4")
        if n_theta < stencil_order:
            raise GridError(f"n_theta must be >= {stencil_order}")
        if radial_map not in ("log", "uniform"):
            raise GridError(f"unknown radial map {radial_map!r}")
        # counts are cells: n_r + 1 radial nodes (both spheres are nodes),
        # n_theta cell-centred polar nodes, n_phi periodic azimuthal nodes
        self.n_r, self.n_theta, self.n_phi = int(n_r), int(n_theta), int(n_phi)
        self.nr_nodes = self.n_r + 1
        self.r_min, self.r_max = float(r_min), float(r_max)
        self.mode = mode
        self.stencil_order = int(stencil_order)
        self.radial_map = radial_map
        self.shape = (self.nr_nodes, self.n_theta, self.n_phi)
        self._build_coordinates()
        self._build_stencils()

    # ------------------------------------------------------------ metadata
    @property
    def axisymmetric(self):
        return self.mode == AXI

    def metadata(self):
        return {
            "r_min": self.r_min,
            "r_max": self.r_max,
            "n_r": self.n_r,
            "n_theta": self.n_theta,
            "n_phi": self.n_phi,
            "mode": self.mode,
            "stencil_order": self.stencil_order,
            "radial_map": self.radial_map,
        }

    @classmethod
    def from_metadata(cls, meta):
        return cls(int(meta["n_r"]), int(meta["n_theta"]), int(meta["n_phi"]),
                   float(meta["r_min"]), float(meta["r_max"]), meta["mode"],
                   int(meta["stencil_order"]), meta.get("radial_map", "log"))

    def refined(self, factor=2):
        n_phi = self.n_phi if self.axisymmetric else self.n_phi * factor
        return Grid(self.n_r * factor, self.n_theta * factor, n_phi, self.r_min,
                    self.r_max, self.mode, self.stencil_order, self.radial_map)

    def with_stencil_order(self, order):
        """Copy of this grid differencing at another (even) order.

        Used internally for truncation-error estimates; orders outside {2, 4}
        are not available through the constructor.
        """
        other = object.__new__(Grid)
        other.__dict__.update(self.__dict__)
        other.stencil_order = int(order)
        other._build_stencils()
        return other

    def __repr__(self):
        return (f"Grid(n_r={self.n_r}, n_theta={self.n_theta}, n_phi={self.n_phi}, "
                f"r=[{self.r_min}, {self.r_max}], mode={self.mode}, order={self.stencil_order})")

    # --------------------------------------------------------- coordinates
    def _build_coordinates(self):
        n_r = self.nr_nodes
        if self.radial_map == "log":
            length = np.log(self.r_max / self.r_min)
            self.xi = np.linspace(0.0, length, n_r)
            self.r = self.r_min * np.exp(self.xi)
            self.r_xi = self.r.copy()
            self.r_xixi = self.r.copy()
        else:
            self.xi = np.linspace(self.r_min, self.r_max, n_r)
            self.r = self.xi.copy()
            self.r_xi = np.ones(n_r)
            self.r_xixi = np.zeros(n_r)
        self.r[0], self.r[-1] = self.r_min, self.r_max
        self.dxi = self.xi[1] - self.xi[0]
        self.dtheta = np.pi / self.n_theta
        self.theta = (np.arange(self.n_theta) + 0.5) * self.dtheta
        self.dphi = 2.0 * np.pi / self.n_phi
        self.phi = np.arange(self.n_phi) * self.dphi
        R, TH, PH = np.meshgrid(self.r, self.theta, self.phi, indexing="ij")
        self.R, self.TH, self.PH = R, TH, PH
        st, ct, sp, cp = np.sin(TH), np.cos(TH), np.sin(PH), np.cos(PH)
        self.normal = np.array([st * cp, st * sp, ct])
        self.e_theta = np.array([ct * cp, ct * sp, -st])
        self.e_phi = np.array([-sp, cp, 0.0 * st])
        self.x = R * self.normal
        # J[a, i] = d y^a / d x^i for y = (r, theta, phi)
        J = np.array([self.normal, self.e_theta / R, self.e_phi / (R * st)])
        # derivatives of J with respect to (r, theta, phi)
        dJ = np.zeros((3, 3, 3) + self.shape)  # dJ[b, a, i] = d_b J[a, i]
        dJ[1, 0] = self.e_theta
        dJ[2, 0] = st * self.e_phi
        dJ[0, 1] = -J[1] / R
        dJ[1, 1] = -self.normal / R
        dJ[2, 1] = ct * self.e_phi / R
        dJ[0, 2] = -J[2] / R
        dJ[1, 2] = -(ct / st) * J[2]
        dJ[2, 2] = np.array([-cp, -sp, 0.0 * st]) / (R * st)
        self.J = J
        # hess[a, i, j] = d^2 y^a / dx^i dx^j
        self.hess = np.einsum("bj...,bai...->aij...", J, dJ)
        # dx^i / dy^a, used to read coordinate-frame components
        self.E = np.array([self.normal, R * self.e_theta, R * st * self.e_phi])

    # ------------------------------------------------------------ stencils
    def _build_stencils(self):
        p = self.stencil_order
        self.sr1 = bounded_stencil(self.nr_nodes, 1, p, self.dxi)
        self.sr2 = bounded_stencil(self.nr_nodes, 2, p, self.dxi)
        nt = self.n_theta
        sin_t, cos_t = np.sin(self.theta), np.cos(self.theta)
        e1 = polar_stencil(nt, 1, p, self.dtheta, 1.0)
        e2 = polar_stencil(nt, 2, p, self.dtheta, 1.0)
        # odd data c: difference c/sin(theta), which is even and smooth
        inv = 1.0 / sin_t
        o1 = _combine(_identity(nt, cos_t / sin_t), _scaled(e1, sin_t, inv))
        o2 = _combine(_identity(nt, -np.ones(nt)), _scaled(e1, 2.0 * cos_t, inv),
                      _scaled(e2, sin_t, inv))
        self.st1 = {1: e1, -1: o1}
        self.st2 = {1: e2, -1: o2}
        if not self.axisymmetric:
            m = np.fft.fftfreq(self.n_phi, 1.0 / self.n_phi)
            self.phi_modes = m
            self.mode_parity = np.where(np.abs(m) % 2 == 0, 1, -1)
            # periodic centred differences are diagonal in the Fourier basis; the
            # exact symbols im and -m^2 are used so that the m = 1 content stays
            # regular against the 1/sin^2 factors near the axis
            sym1 = 1j * m
            sym1[np.abs(m) == self.n_phi // 2] = 0.0
            self.phi_sym1 = sym1
            self.phi_sym2 = -(m**2)

    # ------------------------------------------------------------ applying
    def _apply_r(self, st, comps):
        c = comps.shape[0]
        arr = np.moveaxis(comps, 1, 0).reshape(self.nr_nodes, -1)
        out = st.apply(arr).reshape(self.nr_nodes, c, self.n_theta, self.n_phi)
        return np.moveaxis(out, 0, 1)

    def _apply_theta_axis(self, st, arr):
        """Apply a theta stencil to ``arr`` of shape (C, n_r, n_theta, K)."""
        c, _, nt, k = arr.shape
        flat = np.moveaxis(arr, 2, 0).reshape(nt, -1)
        return np.moveaxis(st.apply(flat).reshape(nt, c, self.nr_nodes, k), 0, 2)

    def _theta_parity(self, which, arr, parity):
        stencils = self.st1 if which == 1 else self.st2
        out = np.empty_like(arr)
        for par in (1, -1):
            sel = parity == par
            if np.any(sel):
                out[sel] = self._apply_theta_axis(stencils[par], arr[sel])
        return out

    def _angular_axi(self, comps, dr, rank):
        parity = self.component_parity(rank)
        dth = self._theta_parity(1, comps, parity)
        dthth = self._theta_parity(2, comps, parity)
        drth = self._theta_parity(1, dr, parity)
        shp = (3,) * rank + self.shape

        def rot(x):
            return self.omega_action(x.reshape(shp), rank).reshape(x.shape)

        dph = rot(comps)
        return dth, dthth, drth, dph, rot(dph), rot(dr), rot(dth)

    def _angular_modes(self, comps, dr):
        """Angular derivatives in full-3d mode, mode by mode in phi."""
        if np.iscomplexobj(comps) or np.iscomplexobj(dr):
            re = self._angular_modes(comps.real, dr.real)
            im = self._angular_modes(comps.imag, dr.imag)
            return tuple(a + 1j * b for a, b in zip(re, im))
        fc = np.fft.fft(comps, axis=-1)
        fr = np.fft.fft(dr, axis=-1)
        parity = self.mode_parity
        out_th, out_thth, out_rth = (np.empty_like(fc) for _ in range(3))
        for par in (1, -1):
            sel = parity == par
            for src, which, dst in ((fc, 1, out_th), (fc, 2, out_thth), (fr, 1, out_rth)):
                st = (self.st1 if which == 1 else self.st2)[par]
                dst[..., sel] = self._apply_theta_axis(st, src[..., sel])
        s1, s2 = self.phi_sym1, self.phi_sym2

        def back(x):
            return np.fft.ifft(x, axis=-1).real

        return (back(out_th), back(out_thth), back(out_rth), back(s1 * fc),
                back(s2 * fc), back(s1 * fr), back(s1 * out_th))

    def d_r(self, comps):
        """Radial derivative of a stack of scalar arrays ``(C, n_r + 1, n_theta, n_phi)``."""
        return self._apply_r(self.sr1, comps) / self.r_xi[:, None, None]

    @staticmethod
    def component_parity(rank):
        """Sign of each Cartesian component under the pi-rotation about z."""
        if rank == 0:
            return np.ones(1)
        signs = np.array([-1.0, -1.0, 1.0])
        return np.array([np.prod(signs[list(ix)]) for ix in product(range(3), repeat=rank)])

    @staticmethod
    def omega_action(T, rank):
        """Derivative of a rotated field with respect to the rotation angle."""
        if rank == 0:
            return np.zeros_like(T)
        out = np.zeros_like(T)
        for pos in range(rank):
            moved = np.moveaxis(T, pos, 0)
            rot = np.tensordot(OMEGA, moved, axes=(1, 0))
            out = out + np.moveaxis(rot, 0, pos)
        return out

    def jet(self, T):
        """Cartesian 2-jet of a tensor field given by its component array."""
        T = np.asarray(T)
        rank = T.ndim - 3
        if T.shape[rank:] != self.shape:
            raise GridError(f"field shape {T.shape} does not match grid {self.shape}")
        comps = T.reshape((3**rank,) + self.shape)
        rx = self.r_xi[:, None, None]
        d1x = self._apply_r(self.sr1, comps)
        dr = d1x / rx
        drr = (self._apply_r(self.sr2, comps) - (self.r_xixi[:, None, None] / rx) * d1x) / rx**2
        if self.axisymmetric:
            ang = self._angular_axi(comps, dr, rank)
        else:
            ang = self._angular_modes(comps, dr)
        dth, dthth, drth, dph, dphph, drph, dthph = ang
        first = np.array([dr, dth, dph])
        second = np.array([[drr, drth, drph], [drth, dthth, dthph], [drph, dthph, dphph]])
        return self.cartesian_jet(T, first, second)

    def cartesian_jet(self, T, first, second):
        """Jet from partials in (r, theta, phi).

        ``first[a]`` and ``second[a, b]`` have the component-stacked shape
        ``(C, n_r + 1, n_theta, n_phi)``; the chain rule uses the exact Jacobian
        and Hessian of the spherical coordinates.
        """
        J, hs = self.J[:, :, None], self.hess[:, :, :, None]
        d1 = np.einsum("ai...,ac...->ic...", J, first)
        d2 = (np.einsum("ai...,bj...,abc...->ijc...", J, J, second, optimize=True)
              + np.einsum("aij...,ac...->ijc...", hs, first))
        return Jet(T, d1.reshape((3,) + T.shape), d2.reshape((3, 3) + T.shape))

    # ---------------------------------------------------------- quadrature
    def radial_weights(self):
        n, h = self.nr_nodes, self.dxi
        w = np.ones(n) * h
        if self.stencil_order == 2:
            w[0] = w[-1] = 0.5 * h
        else:
            ends = np.array([3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0]) * h
            w[:3] = ends
            w[-3:] = ends[::-1]
        return w * self.r_xi

    def phi_weight(self):
        return 2.0 * np.pi if self.axisymmetric else self.dphi

    @cached_property
    def polar_weights(self):
        """Fejer weights for ``int f sin(theta) dtheta`` on the cell-centred nodes.

        Exact for polynomials in cos(theta) of degree < n_theta, hence spectrally
        accurate for smooth fields on the sphere; the midpoint rule with a
        sin(theta) factor is only second order.
        """
        n, th = self.n_theta, self.theta
        k = np.arange(1, n // 2 + 1)
        corr = np.cos(2.0 * np.outer(th, k)) / (4.0 * k**2 - 1.0)
        return 2.0 / n * (1.0 - 2.0 * corr.sum(axis=1))

    def volume_weights(self):
        """Flat volume quadrature weights, r^2 sin(theta) dr dtheta dphi."""
        wr = self.radial_weights()[:, None, None]
        return wr * self.R**2 * self.polar_weights[None, :, None] * self.phi_weight()

    def sphere_weights(self, i=0):
        """Flat area weights on the radial node row ``i``."""
        return self.r[i] ** 2 * self.polar_weights[:, None] * self.phi_weight() * np.ones(self.shape[1:])

    def integrate(self, f):
        return np.sum(self.volume_weights() * f)

    # ------------------------------------------------------------- helpers
    def scalar(self, fn):
        """Evaluate ``fn(x, y, z)`` on the nodes."""
        return fn(*self.x)

    def coordinate_components(self, T):
        """Components of a covariant tensor in the (r, theta, phi) coordinate frame."""
        T = np.asarray(T)
        rank = T.ndim - 3
        out = T
        for pos in range(rank):
            out = np.moveaxis(np.einsum("ai...,i...->a...", self.E, np.moveaxis(out, pos, 0)), 0, pos)
        return out

    def from_coordinate_components(self, T):
        """Cartesian components of a covariant tensor given in the (r, theta, phi) frame."""
        T = np.asarray(T)
        rank = T.ndim - 3
        out = T
        for pos in range(rank):
            out = np.moveaxis(np.einsum("ai...,a...->i...", self.J, np.moveaxis(out, pos, 0)), 0, pos)
        return out

    def node_label(self, flat_index):
        i, j, k = np.unravel_index(flat_index, self.shape)
        return (f"node (i_r={i}, i_theta={j}, i_phi={k}) at r={self.r[i]:.6g}, "
                f"theta={self.theta[j]:.6g}, phi={self.phi[k]:.6g}")
