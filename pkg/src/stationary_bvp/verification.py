"""Check drivers shared by the CLI and the acceptance tests.

Each driver returns plain records (dicts with a ``passed`` flag) so they can
be printed as report rows or asserted on directly.
"""

import numpy as np

from . import linearized as lin
from .exact import oracle
from .geometry import MetricGeometry, boundary_geometry
from .grid import Grid
from .solver import Problem, pack_fields
from .systems import boundary_map_Pi, conformal, gauge_value, residual_II

FD_STEPS = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 1e-6)


def relative_error(a, b):
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale > 0 else float(np.max(np.abs(a)))


def best_step(analytic, fn, steps=FD_STEPS):
    """Smallest relative error of ``analytic`` against centred differences of ``fn``."""
    best = (np.inf, None)
    for e in steps:
        err = relative_error(analytic, (fn(e) - fn(-e)) / (2.0 * e))
        if err < best[0]:
            best = (err, e)
    return best


def measured_orders(errors, factor=2.0):
    """Observed convergence orders between successive refinements."""
    errors = np.asarray(errors, dtype=float)
    return [float(np.log(errors[k] / errors[k + 1]) / np.log(factor)) for k in range(len(errors) - 1)]


def linearization_suite(c, bd, rng, tol=1e-6, kind="divergence"):
    """Analytic tangents against centred differences of the nonlinear operators.

    ``c`` is conformal background data (finite-difference jets are used for
    every perturbed evaluation) and ``bd`` the boundary data of the Jacobian
    row check.
    """
    grid = c.grid
    gj = grid.jet(np.asarray(c.g))
    geom = MetricGeometry(gj, grid)
    d = lin.random_deformation(grid, rng)
    hj = d.jet("h")

    def along(fn):
        return lambda e: fn(gj + hj.scale(e))

    b0 = boundary_geometry(grid, gj)
    checks = [
        ("ric_prime", lin.ric_prime(geom, hj), along(lambda j: MetricGeometry(j, grid).ric)),
        ("s_prime", lin.s_prime(geom, hj), along(lambda j: MetricGeometry(j, grid).s)),
        ("normal_prime", lin.normal_prime(b0, hj.val[..., 0, :, :]),
         along(lambda j: boundary_geometry(grid, j).nu)),
        ("H_prime", lin.H_prime(grid, gj, hj), along(lambda j: boundary_geometry(grid, j).H)),
        ("gauge_prime_divergence", lin.gauge_prime(geom, hj, "divergence"),
         along(lambda j: gauge_value(grid, j, geom, "divergence"))),
        ("gauge_prime_bianchi", lin.gauge_prime(geom, hj, "bianchi"),
         along(lambda j: gauge_value(grid, j, geom, "bianchi"))),
        ("ric_principal_plus_zero_order", lin.ric_principal(geom, hj) + lin.ric_zero_order(geom, hj.val),
         along(lambda j: MetricGeometry(j, grid).ric)),
    ]
    hup = np.einsum("ka...,ab...,bl...->kl...", geom.ginv, hj.val, geom.ginv)
    checks.append(("s_principal_plus_zero_order",
                   lin.s_principal(geom, hj) - np.einsum("ij...,ij...->...", hup, geom.ric),
                   along(lambda j: MetricGeometry(j, grid).s)))
    rows = []
    for name, analytic, fn in checks:
        err, step = best_step(analytic, fn)
        rows.append({"check": name, "error": err, "step": step, "passed": bool(err <= tol)})

    prob = Problem(grid, bd, c, kind)
    x = pack_fields(c).astype(float)
    J = prob.jacobian(x, "analytic")
    dx = 0.1 * rng.standard_normal((8,) + grid.shape)
    dx[:, -1] = 0.0
    jv = (J @ dx.reshape(-1)).reshape(x.shape)
    err, step = best_step(jv, lambda e: prob.residual(x + e * dx))
    rows.append({"check": "jacobian_vector", "error": err, "step": step, "passed": bool(err <= tol)})
    return rows


def schwarzschild_background(grid, M=0.1):
    p = oracle(grid, "schwarzschild", M)
    return conformal(p).fd_copy(), boundary_map_Pi(p)


def oracle_residual_study(family, M, a, sizes, order, r_min=1.0, r_max=8.0):
    """Interior sup norms of the ungauged residual under refinement."""
    sups = []
    for n_r, n_t in sizes:
        grid = Grid(n_r, n_t, r_min=r_min, r_max=r_max, stencil_order=order)
        c = conformal(oracle(grid, family, M, a)).fd_copy()
        res = residual_II(c)
        sups.append(max(float(np.max(np.abs(np.asarray(x)[..., 1:-1, :, :]))) for x in (res.E, res.F, res.H)))
    return sups


def self_adjoint_study(background, seed=0, n_pairs=20, order=4, sizes=((64, 32), (128, 64)),
                       r_min=1.0, r_max=8.0, M=0.1):
    """Normalised pairing defects of random M2 pairs on each grid.

    ``background`` is "flat" or "schwarzschild". Each record holds the
    largest defect over ``n_pairs`` pairs and the defect of a pair whose
    second member violates the Neumann row for sigma.
    """
    out = []
    for n_r, n_t in sizes:
        grid = Grid(n_r, n_t, r_min=r_min, r_max=r_max, stencil_order=order)
        mass = 0.0 if background == "flat" else M
        c = conformal(oracle(grid, "schwarzschild", mass))
        proj = lin.M2Projector(c)
        rng = np.random.default_rng(seed)
        defects = [abs(lin.self_adjoint_defect(c, *lin.random_m2_pair(c, rng, projector=proj))[0])
                   for _ in range(n_pairs)]
        d1, d2 = lin.random_m2_pair(c, np.random.default_rng(seed), require_bc=False, projector=proj)
        violated = abs(lin.self_adjoint_defect(c, d1, d2, check=False)[0])
        out.append({"grid": [n_r, n_t], "max_defect": float(max(defects)),
                    "mean_defect": float(np.mean(defects)), "violating_defect": float(violated)})
    return out
