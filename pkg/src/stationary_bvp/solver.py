"""Newton solver for the gauged boundary value problem on the truncated shell.

Unknowns are the conformal fields (g, u, psi): six packed metric components,
u and psi at every node. Rows are the gauged interior operator at interior
nodes, the eight boundary rows (gauge 1-form, rescaled induced metric, mean
curvature, Neumann row) on the inner sphere and background-matching rows on
the outer sphere (see ``Problem``).

Jacobians are assembled column-group by column-group: nodes whose stencil
windows never overlap share one evaluation, so a Jacobian costs
``8 * c_r * c_theta * c_phi`` residual evaluations where the c's are window
spans. The "analytic" mode differentiates each group by a complex step (exact
to roundoff); the "fd-oracle" mode uses centred real differences.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from .geometry import MetricGeometry, adm_mass, weighted_norm
from .systems import (BoundaryData, ConformalData, boundary_rows_from_jets, gauge_value,
                      interior_operator_from_jets, reference_geometry)
from .tensors import DegenerateMetricError, flat_metric, sym_full, sym_pack

N_FIELDS = 8
FIELD_NAMES = ("g_xx", "g_xy", "g_xz", "g_yy", "g_yz", "g_zz", "u", "psi")
JACOBIAN_MODES = ("analytic", "fd-oracle")
COMPLEX_STEP = 1e-30


class LinearSolveError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(f"{message}; residual history {['%.3e' % h for h in history]}")
        self.history = history


class SolverDivergence(RuntimeError):
    """Newton failed; carries the best iterate and the report."""

    def __init__(self, message, best, report):
        super().__init__(message)
        self.best = best
        self.report = report


@dataclass
class SolveConfig:
    gauge: str = "divergence"
    tol: float = 1e-9
    gauge_tol: float = 1e-6
    max_steps: int = 12
    damping: tuple = (1.0, 0.5, 0.25, 0.125, 0.0625)
    armijo: float = 1e-4
    jacobian: str = "analytic"
    linear_tol: float = 1e-10
    refinement_steps: int = 3
    continuation_steps: int = 4
    max_bisections: int = 4
    weight: float = 0.5

    def __post_init__(self):
        if self.gauge not in ("divergence", "bianchi"):
            raise ValueError(f"unknown gauge {self.gauge!r}")
        if not (self.tol > 0 and self.gauge_tol > 0 and self.linear_tol > 0):
            raise ValueError("tolerances must be positive")
        self.damping = tuple(float(t) for t in self.damping)
        if not self.damping or any(not 0.0 < t <= 1.0 for t in self.damping):
            raise ValueError("damping factors must lie in (0, 1]")
        if self.jacobian not in JACOBIAN_MODES:
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")
        if self.max_steps < 1 or self.continuation_steps < 1:
            raise ValueError("step counts must be positive")


@dataclass
class SolveReport:
    iterations: list = field(default_factory=list)
    converged: bool = False
    gauge_norm: float = float("nan")
    gauge_relative: float = float("nan")
    adm_mass: float = float("nan")
    wall_time: float = 0.0
    message: str = ""

    def to_dict(self):
        return asdict(self)

    @property
    def final_residual(self):
        return self.iterations[-1]["residual"] if self.iterations else float("nan")


# -------------------------------------------------------------- packing


def pack_fields(c):
    return np.concatenate([sym_pack(c.g), np.asarray(c.u)[None], np.asarray(c.psi)[None]], axis=0)


def unpack_fields(grid, x):
    return ConformalData(grid, sym_full(x[:6]), x[6], x[7])


def interpolate_boundary_data(a, b, t):
    return BoundaryData((1 - t) * a.gamma + t * b.gamma, (1 - t) * a.lam + t * b.lam,
                        (1 - t) * a.f + t * b.f)


def interpolate_fields(a, b, t):
    return ConformalData(a.grid, (1 - t) * a.g + t * b.g, (1 - t) * a.u + t * b.u,
                         (1 - t) * a.psi + t * b.psi)


# ----------------------------------------------------- grouped Jacobians


def _window_spans(st_list, n):
    """Union of the nonzero stencil columns for every output row."""
    windows = [set([i]) for i in range(n)]
    for st in st_list:
        for i in range(n):
            windows[i].update(int(k) for k, cf in zip(st.idx[i], st.coef[i]) if cf != 0.0)
    span = max(max(w) - min(w) + 1 for w in windows)
    return windows, span


def _colour_columns(windows, n_colour):
    """``cols[c][i]``: the unique column of colour c in row i's window, or -1."""
    cols = -np.ones((n_colour, len(windows)), dtype=np.int64)
    for i, w in enumerate(windows):
        for k in w:
            c = k % n_colour
            if cols[c, i] >= 0:
                raise RuntimeError("column colouring is not separating")
            cols[c, i] = k
    return cols


class ColumnGroups:
    """Node colouring such that no stencil window contains two nodes of one colour."""

    def __init__(self, grid):
        self.grid = grid
        wr, self.c_r = _window_spans([grid.sr1, grid.sr2], grid.nr_nodes)
        wt, self.c_t = _window_spans([*grid.st1.values(), *grid.st2.values()], grid.n_theta)
        self.col_r = _colour_columns(wr, self.c_r)
        self.col_t = _colour_columns(wt, self.c_t)
        self.c_p = 1 if grid.axisymmetric else grid.n_phi
        self.col_p = np.arange(self.c_p)[:, None] * np.ones((1, grid.n_phi), dtype=np.int64)

    def __iter__(self):
        g = self.grid
        for a in range(self.c_r):
            for b in range(self.c_t):
                for c in range(self.c_p):
                    mask = np.zeros(g.shape)
                    mask[a::self.c_r, b::self.c_t, c::self.c_p] = 1.0
                    yield (a, b, c), mask

    @property
    def count(self):
        return self.c_r * self.c_t * self.c_p

    def coo_block(self, colour, D, n_fields, field_index):
        """Row/column/value triplets for one evaluated column group."""
        a, b, c = colour
        g = self.grid
        n_nodes = int(np.prod(g.shape))
        ir, jt, kp = np.meshgrid(self.col_r[a], self.col_t[b], self.col_p[c], indexing="ij")
        valid = (ir >= 0) & (jt >= 0)
        col_node = np.ravel_multi_index((np.where(valid, ir, 0), np.where(valid, jt, 0), kp), g.shape)
        rows_node = np.arange(n_nodes).reshape(g.shape)
        rows, cols, vals = [], [], []
        for comp in range(D.shape[0]):
            v = D[comp]
            keep = valid & (v != 0.0)
            rows.append(comp * n_nodes + rows_node[keep])
            cols.append(field_index * n_nodes + col_node[keep])
            vals.append(v[keep])
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def grouped_jacobian(grid, fn, x0, n_fields, method="complex-step", step=None, groups=None):
    """Sparse Jacobian of ``fn`` (array (n_fields, *shape) -> same) at ``x0``.

    ``method``: "complex-step", "central" or "linear" (``fn`` linear; columns
    are ``fn(e)``).
    """
    groups = groups or ColumnGroups(grid)
    x0 = np.asarray(x0, dtype=float)
    n = n_fields * int(np.prod(grid.shape))
    R, C, V = [], [], []
    for f in range(n_fields):
        for colour, mask in groups:
            e = np.zeros_like(x0)
            e[f] = mask
            if method == "complex-step":
                D = np.imag(fn(x0 + 1j * COMPLEX_STEP * e)) / COMPLEX_STEP
            elif method == "central":
                h = step or 1e-6
                D = (fn(x0 + h * e) - fn(x0 - h * e)) / (2.0 * h)
            elif method == "linear":
                D = fn(e)
            else:
                raise ValueError(f"unknown differentiation method {method!r}")
            r, c, v = groups.coo_block(colour, np.real(D).reshape((-1,) + grid.shape), n_fields, f)
            R.append(r)
            C.append(c)
            V.append(v)
    return sparse.csr_matrix((np.concatenate(V), (np.concatenate(R), np.concatenate(C))), shape=(n, n))


def assemble_linear_operator(grid, op, n_fields):
    """Sparse matrix of a linear node-local-stencil operator on flat vectors."""
    shape = (n_fields,) + grid.shape

    def fn(x):
        return np.asarray(op(x.reshape(-1))).reshape(shape)

    return grouped_jacobian(grid, fn, np.zeros(shape), n_fields, method="linear")


# -------------------------------------------------------------- problem


OUTER_CONDITIONS = ("mirror", "dirichlet")


class Problem:
    """Discrete gauged boundary value problem for conformal data.

    ``background`` supplies the reference metric of the gauge and the values
    imposed on the outer sphere. With ``outer="dirichlet"`` all eight fields
    are frozen there. With ``outer="mirror"`` (default) the metric carries the
    inner sphere's gauge and induced-metric rows, with data read off the
    background, while u and psi are frozen. Freezing the metric components
    leaves the gauge 1-form without an outer condition, and the truncated
    problem then has a near-kernel made of radial diffeomorphisms.
    """

    def __init__(self, grid, bd, background, gauge="divergence", outer="mirror"):
        if outer not in OUTER_CONDITIONS:
            raise ValueError(f"unknown outer condition {outer!r}")
        self.grid = grid
        self.bd = bd
        self.background = background
        self.gauge = gauge
        self.outer = outer
        self.ref = reference_geometry(grid, np.asarray(background.g, dtype=float))
        self.x_outer = pack_fields(background)[:, -1]
        self.groups = ColumnGroups(grid)
        if outer == "mirror":
            self.bd_outer = self._outer_data(background)

    def _outer_data(self, bg):
        """Boundary data that the background satisfies on the outer sphere."""
        grid = self.grid
        gjet, ujet, pjet = grid.jet(bg.g), grid.jet(bg.u), grid.jet(bg.psi)
        zero = BoundaryData(np.array([1.0, 0.0, 1.0])[:, None, None] * np.ones(grid.shape[1:]),
                            np.zeros(grid.shape[1:]), np.zeros(grid.shape[1:]))
        rows = boundary_rows_from_jets(grid, gjet, ujet, pjet, zero, self.ref, self.gauge, row=-1)
        eu = np.exp(ujet.val[-1])
        gamma = rows["metric"] + zero.gamma
        return BoundaryData(gamma, eu * rows["mean_curvature"], eu * rows["neumann"])

    def residual(self, x):
        grid = self.grid
        g = sym_full(x[:6])
        gjet, ujet, pjet = grid.jet(g), grid.jet(x[6]), grid.jet(x[7])
        geom = MetricGeometry(gjet, grid, check=False)
        res = interior_operator_from_jets(geom, ujet, pjet, self.ref, self.gauge)
        out = np.concatenate([sym_pack(res.E), res.F[None], res.H[None]], axis=0)
        rows = boundary_rows_from_jets(grid, gjet, ujet, pjet, self.bd, self.ref, self.gauge)
        out[:, 0] = np.concatenate([rows["gauge"], rows["metric"], rows["mean_curvature"][None],
                                    rows["neumann"][None]], axis=0)
        out[:, -1] = x[:, -1] - self.x_outer
        if self.outer == "mirror":
            rows = boundary_rows_from_jets(grid, gjet, ujet, pjet, self.bd_outer, self.ref,
                                           self.gauge, row=-1)
            out[:6, -1] = np.concatenate([rows["gauge"], rows["metric"]], axis=0)
        return out

    def jacobian(self, x, mode="analytic", step=None):
        if mode == "analytic":
            return grouped_jacobian(self.grid, self.residual, x, N_FIELDS, "complex-step",
                                    groups=self.groups)
        if mode == "fd-oracle":
            return grouped_jacobian(self.grid, self.residual, x, N_FIELDS, "central",
                                    step=step or 1e-6, groups=self.groups)
        raise ValueError(f"unknown jacobian mode {mode!r}")

    def norms(self, F, weight=0.5):
        interior = F[:, 1:-1]
        return {
            "residual": float(np.max(np.abs(F))),
            "interior": float(np.max(np.abs(interior))),
            "boundary": float(np.max(np.abs(F[:, 0]))),
            "outer": float(np.max(np.abs(F[:, -1]))),
            "weighted": weighted_norm(self.grid, np.where(np.arange(self.grid.nr_nodes)[:, None, None]
                                                          == 0, 0.0, F), 0, weight),
        }


def assemble_jacobian(c, bd, gauge="divergence", mode="analytic", background=None, step=None):
    """Jacobian of the discrete residual at ``c`` (reference = background, default ``c``)."""
    prob = Problem(c.grid, bd, background or c, gauge)
    return prob.jacobian(pack_fields(c), mode, step)


def linear_solve(J, rhs, tol=1e-10, refinement_steps=3):
    """Sparse LU solve with iterative refinement; raises with the residual history."""
    rhs = np.asarray(rhs, dtype=float)
    scale = np.linalg.norm(rhs)
    if scale == 0.0:
        return np.zeros_like(rhs)
    try:
        lu = splu(sparse.csc_matrix(J))
    except RuntimeError as exc:
        raise LinearSolveError(f"factorization failed ({exc})", []) from exc
    x = lu.solve(rhs)
    history = []
    for _ in range(refinement_steps + 1):
        r = rhs - J @ x
        rel = np.linalg.norm(r) / scale
        history.append(float(rel))
        if not np.isfinite(rel):
            break
        if rel <= tol:
            return x
        x = x + lu.solve(r)
    raise LinearSolveError(f"linear residual above {tol:g}", history)


# --------------------------------------------------------------- Newton


def gauge_diagnostics(grid, g, g_ref, weight=0.5):
    """Interior weighted norm of the divergence gauge, absolute and relative.

    The relative value divides by the weighted C^1 norm of ``g - flat``,
    the natural size of a first-order quantity built from g.
    """
    G = gauge_value(grid, g, g_ref, "divergence")
    G = G.copy()
    G[:, 0] = 0.0
    G[:, -1] = 0.0
    absolute = weighted_norm(grid, G, 0, weight)
    scale = weighted_norm(grid, g - flat_metric(grid.shape), 1, weight)
    return absolute, absolute / scale if scale > 0 else absolute


def newton_solve(init, bd, cfg=None, background=None):
    """Damped Newton iteration for the gauged problem.

    The gauge reference metric and the outer Dirichlet values come from
    ``background`` (default: ``init``).
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    grid = init.grid
    background = background or init
    prob = Problem(grid, bd, background, cfg.gauge)
    x = pack_fields(init).astype(float)
    F = prob.residual(x)
    norms = prob.norms(F, cfg.weight)
    report = SolveReport()
    report.iterations.append(dict(step=0, damping=0.0, **norms))
    best = (norms["residual"], x)
    for step in range(1, cfg.max_steps + 1):
        if norms["residual"] <= cfg.tol:
            break
        J = prob.jacobian(x, cfg.jacobian)
        dx = linear_solve(J, -F.reshape(-1), cfg.linear_tol, cfg.refinement_steps).reshape(x.shape)
        accepted = False
        for t in cfg.damping:
            trial = x + t * dx
            try:
                Ft = prob.residual(trial)
            except (DegenerateMetricError, FloatingPointError, ValueError):
                continue
            nt = prob.norms(Ft, cfg.weight)
            if np.isfinite(nt["residual"]) and nt["residual"] <= (1.0 - cfg.armijo * t) * norms["residual"]:
                x, F, norms, accepted = trial, Ft, nt, True
                report.iterations.append(dict(step=step, damping=t, **norms))
                break
        if not accepted:
            report.message = f"line search failed at step {step}"
            break
        if norms["residual"] < best[0]:
            best = (norms["residual"], x)
    report.converged = norms["residual"] <= cfg.tol
    sol = unpack_fields(grid, x)
    report.gauge_norm, report.gauge_relative = gauge_diagnostics(grid, sol.g, background.g, cfg.weight)
    try:
        # mass of the orbit-space metric g_S = exp(-2u) g
        report.adm_mass = float(adm_mass(grid, grid.jet(np.exp(-2.0 * sol.u) * sol.g)))
    except ValueError:
        pass
    report.wall_time = time.perf_counter() - t0
    if not report.converged:
        report.message = report.message or f"no convergence in {cfg.max_steps} steps"
        raise SolverDivergence(report.message, unpack_fields(grid, best[1]), report)
    report.message = "converged"
    return sol, report


def continuation(bd_start, bd_end, steps=None, cfg=None, init=None, background_start=None,
                 background_end=None):
    """Solve along a linear path of boundary data (and backgrounds).

    Each step is warm-started from the previous solution; a failing step is
    bisected up to ``cfg.max_bisections`` times. Returns a list of
    ``(t, solution, report)``.
    """
    cfg = cfg or SolveConfig()
    steps = steps or cfg.continuation_steps
    if init is None:
        raise ValueError("continuation needs an initial iterate")
    bg0 = background_start or init
    bg1 = background_end or bg0

    def solve_at(t, start):
        bd = interpolate_boundary_data(bd_start, bd_end, t)
        bg = interpolate_fields(bg0, bg1, t)
        return newton_solve(start, bd, cfg, background=bg)

    same = (np.array_equal(bd_start.gamma, bd_end.gamma) and np.array_equal(bd_start.lam, bd_end.lam)
            and np.array_equal(bd_start.f, bd_end.f) and bg0 is bg1)
    if same:
        sol, rep = solve_at(1.0, init)
        return [(1.0, sol, rep)]
    path = []
    current, t = init, 0.0
    targets = list(np.linspace(0.0, 1.0, steps + 1)[1:])
    depth = 0
    while targets:
        target = targets[0]
        try:
            sol, rep = solve_at(target, current)
        except (SolverDivergence, LinearSolveError) as exc:
            depth += 1
            if depth > cfg.max_bisections:
                raise SolverDivergence(f"continuation failed between t={t:.4g} and t={target:.4g}: {exc}",
                                       current, getattr(exc, "report", None)) from exc
            targets.insert(0, 0.5 * (t + target))
            continue
        depth = 0
        targets.pop(0)
        current, t = sol, target
        path.append((target, sol, rep))
    return path
