"""Field containers on a Grid and small pointwise 3x3 linear algebra.

Component arrays always carry the tensor indices first and the grid axes
(n_r, n_theta, n_phi) last. Components refer to the Cartesian frame unless the
``frame`` tag says otherwise.
"""

from dataclasses import dataclass, field

import numpy as np

SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
SYM_NAMES = ("xx", "xy", "xz", "yy", "yz", "zz")
VEC_NAMES = ("x", "y", "z")


class DegenerateMetricError(ValueError):
    """Raised when a metric fails to be positive definite or invertible."""


def sym_full(c6):
    """Expand 6 packed components to a full symmetric (3, 3, ...) array."""
    c6 = np.asarray(c6)
    full = np.empty((3, 3) + c6.shape[1:], dtype=c6.dtype)
    for k, (i, j) in enumerate(SYM_INDEX):
        full[i, j] = c6[k]
        full[j, i] = c6[k]
    return full


def sym_pack(full):
    """Pack the upper triangle of a (3, 3, ...) array, symmetrising first."""
    full = np.asarray(full)
    return np.array([0.5 * (full[i, j] + full[j, i]) for i, j in SYM_INDEX])


def det3(a):
    return (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
            - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
            + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))


def inv3(a):
    """Pointwise inverse of a (3, 3, ...) array by cofactors (complex safe)."""
    cof = np.empty_like(a)
    for i in range(3):
        for j in range(3):
            i1, i2 = [k for k in range(3) if k != i]
            j1, j2 = [k for k in range(3) if k != j]
            cof[j, i] = ((-1) ** (i + j)) * (a[i1, j1] * a[i2, j2] - a[i1, j2] * a[i2, j1])
    return cof / det3(a)


def leading_minors(a):
    a = np.real(a)
    return (a[0, 0], a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0], det3(a))


def check_positive_definite(g, grid=None, what="metric"):
    """Raise DegenerateMetricError naming the first node with a bad minor."""
    for order, minor in enumerate(leading_minors(g), start=1):
        bad = ~(minor > 0)
        if np.any(bad):
            flat = int(np.flatnonzero(bad.ravel())[0])
            if grid is not None and bad.shape == grid.shape:
                where = grid.node_label(flat)
            else:
                where = f"node {np.unravel_index(flat, bad.shape)}"
            raise DegenerateMetricError(
                f"{what} is not positive definite at {where} (leading minor {order} = "
                f"{minor.ravel()[flat]:.3e})")


def flat_metric(shape, dtype=float):
    g = np.zeros((3, 3) + tuple(shape), dtype=dtype)
    for i in range(3):
        g[i, i] = 1.0
    return g


@dataclass
class ScalarField:
    grid: object
    values: np.ndarray
    frame: str = "cartesian"

    rank = 0
    names = ("value",)

    def __post_init__(self):
        self.values = np.broadcast_to(np.asarray(self.values), self.grid.shape).copy()

    @property
    def components(self):
        return self.values[None]

    def full(self):
        return self.values


@dataclass
class OneForm:
    grid: object
    values: np.ndarray
    frame: str = "cartesian"

    rank = 1
    names = VEC_NAMES

    def __post_init__(self):
        self.values = np.broadcast_to(np.asarray(self.values), (3,) + self.grid.shape).copy()

    @property
    def components(self):
        return self.values

    def full(self):
        return self.values


@dataclass
class SymTensor2:
    """Symmetric 2-tensor holding the 6 independent components."""

    grid: object
    packed: np.ndarray
    frame: str = "cartesian"
    is_metric: bool = False
    extra: dict = field(default_factory=dict)

    rank = 2
    names = SYM_NAMES

    def __post_init__(self):
        self.packed = np.broadcast_to(np.asarray(self.packed), (6,) + self.grid.shape).copy()
        if self.is_metric:
            check_positive_definite(self.full(), self.grid)

    @classmethod
    def from_full(cls, grid, full, **kw):
        return cls(grid, sym_pack(full), **kw)

    @property
    def components(self):
        return self.packed

    def full(self):
        return sym_full(self.packed)


FIELD_KINDS = {"scalar": ScalarField, "oneform": OneForm, "symtensor2": SymTensor2}


def field_kind(f):
    for name, cls in FIELD_KINDS.items():
        if isinstance(f, cls):
            return name
    raise TypeError(f"not a field: {type(f).__name__}")
