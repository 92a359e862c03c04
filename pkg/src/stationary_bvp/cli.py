"""Command-line entry point: one verb per invocation, YAML report on stdout.

Every report embeds the resolved configuration. Values come from built-in
defaults, then the ``[global]`` and ``[<verb>]`` sections of ``--config``
(key = value), then explicit flags. The exit status is 0 exactly when every
check performed by the verb passed. Reports carry no timings, so identical
inputs give identical reports.
"""

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np
import yaml

VERBS = ("check-ellipticity", "residual", "linearize-check", "solve", "oracle", "boundary-map",
         "norms", "selfadjoint-check")

GLOBAL_DEFAULTS = {"grid": "32,16", "rmin": 1.0, "rmax": 8.0, "order": 4, "mode": "axi", "out": None}

VERB_DEFAULTS = {
    "check-ellipticity": {"builtin": None, "spec": None, "eta": None},
    "residual": {"oracle": "minkowski", "mass": 0.1, "spin": 0.0, "input": None, "tol": None},
    "linearize-check": {"mass": 0.1, "seed": 0, "tol": 1e-6, "gauge": "divergence"},
    "solve": {"init": "builtin:minkowski", "boundary": "from-oracle 0.1", "gauge": "div",
              "steps": 4, "tol": 1e-9, "max_steps": 12},
    "oracle": {"family": "schwarzschild", "mass": 0.1, "spin": 0.0, "psi": "quadrature"},
    "boundary-map": {"oracle": "schwarzschild", "mass": 0.1, "spin": 0.0, "input": None, "tol": 1e-8},
    "norms": {"oracle": "schwarzschild", "mass": 0.1, "spin": 0.0, "input": None, "k": 1,
              "delta": 0.5},
    "selfadjoint-check": {"background": "schwarzschild", "mass": 0.1, "pairs": 20, "seed": 0,
                          "tol": 1e-3},
}

DEFAULT_ETAS = ("1,0", "0,1", "3/5,4/5")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- parsing


def _add_global(p):
    p.add_argument("--grid", help="cell counts nr,ntheta[,nphi]")
    p.add_argument("--rmin", type=float)
    p.add_argument("--rmax", type=float)
    p.add_argument("--order", type=int, choices=(2, 4))
    p.add_argument("--mode", choices=("axi", "3d"))
    p.add_argument("--out", help="directory for the report and CSV artifacts")
    p.add_argument("--config", help="key = value file with [global] and per-verb sections")


def build_parser():
    parser = argparse.ArgumentParser(prog="stationary-bvp",
                                     description="Stationary vacuum boundary value problem toolkit.")
    sub = parser.add_subparsers(dest="verb", metavar="VERB")
    sub.required = True

    p = sub.add_parser("check-ellipticity", help="exact ADN verdict for a symbol spec")
    p.add_argument("--builtin", choices=("P1", "Phat", "P2"))
    p.add_argument("--spec", help="spec file in the row DSL")
    p.add_argument("--eta", action="append", help="tangential covector p1/q1,p2/q2 (repeatable)")

    p = sub.add_parser("residual", help="residual norms of oracle or file data")
    _oracle_flags(p)
    p.add_argument("--tol", type=float, help="fail when an interior sup norm exceeds this")

    p = sub.add_parser("linearize-check", help="analytic tangents against finite differences")
    p.add_argument("--mass", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--gauge", choices=("divergence", "bianchi"))

    p = sub.add_parser("solve", help="Newton solve with continuation in the boundary data")
    p.add_argument("--init", help="builtin:<family>[:M[,a]] or a directory from the oracle verb")
    p.add_argument("--boundary", help="'from-oracle M[,a]' or a boundary CSV file")
    p.add_argument("--gauge", choices=("div", "bianchi"))
    p.add_argument("--steps", type=int, help="continuation steps")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)

    p = sub.add_parser("oracle", help="write oracle fields and their boundary image")
    p.add_argument("--family", choices=("minkowski", "schwarzschild", "kerr"))
    p.add_argument("--mass", type=float)
    p.add_argument("--spin", type=float)
    p.add_argument("--psi", choices=("quadrature", "closed-form"))

    p = sub.add_parser("boundary-map", help="boundary data (induced metric, H, normal derivative)")
    _oracle_flags(p)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("norms", help="weighted norms and ADM mass")
    _oracle_flags(p)
    p.add_argument("--k", type=int, choices=(0, 1, 2))
    p.add_argument("--delta", type=float)

    p = sub.add_parser("selfadjoint-check", help="pairing defect of random M2 deformation pairs")
    p.add_argument("--background", choices=("flat", "schwarzschild"))
    p.add_argument("--mass", type=float)
    p.add_argument("--pairs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)

    for action in sub.choices.values():
        _add_global(action)
    return parser


def _oracle_flags(p):
    p.add_argument("--oracle", choices=("minkowski", "schwarzschild", "kerr"))
    p.add_argument("--mass", type=float)
    p.add_argument("--spin", type=float)
    p.add_argument("--input", help="directory holding g.csv, u.csv, psi.csv")


def _coerce(value, like):
    if like is None or value is None:
        return value
    if isinstance(like, bool):
        return str(value).lower() in ("1", "true", "yes")
    return type(like)(value)


def resolve_config(args):
    """Defaults < config file < flags; returns a flat dict."""
    verb = args.verb
    cfg = dict(GLOBAL_DEFAULTS)
    cfg.update(VERB_DEFAULTS[verb])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        cp.read(path)
        for section in ("global", verb):
            if cp.has_section(section):
                for key, value in cp.items(section):
                    key = key.replace("-", "_")
                    if key not in cfg:
                        raise UsageError(f"unknown key {key!r} in [{section}] of {path}")
                    cfg[key] = _coerce(value, cfg[key])
    for key, value in vars(args).items():
        if key in ("verb", "config") or value is None:
            continue
        cfg[key] = value
    if cfg.get("out"):
        cfg["out"] = str(Path(cfg["out"]).resolve())
    for key in ("input", "spec"):
        if cfg.get(key):
            cfg[key] = str(Path(cfg[key]).resolve())
    cfg["verb"] = verb
    return cfg


def make_grid(cfg):
    from .grid import Grid

    try:
        counts = [int(x) for x in str(cfg["grid"]).split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --grid {cfg['grid']!r}") from exc
    if len(counts) not in (2, 3):
        raise UsageError("--grid needs nr,ntheta[,nphi]")
    n_phi = counts[2] if len(counts) == 3 else (1 if cfg["mode"] == "axi" else 8)
    return Grid(counts[0], counts[1], n_phi, float(cfg["rmin"]), float(cfg["rmax"]), cfg["mode"],
                int(cfg["order"]))


def _projection_input(cfg, grid):
    """(ProjectionData, label) from --input or the oracle flags.

    Data read from files keeps its own grid; the grid flags then only apply
    to oracle sources.
    """
    from .exact import oracle
    from .io import read_triple
    from .systems import conformal

    if cfg.get("input"):
        data = read_triple(cfg["input"])
        if type(data).__name__ == "ConformalData":
            data = conformal(data, "to_projection")
        return data, f"file:{cfg['input']}"
    return oracle(grid, cfg["oracle"], float(cfg["mass"]), float(cfg["spin"])), cfg["oracle"]


# ------------------------------------------------------------------ verbs


def run_check_ellipticity(cfg):
    from . import symbols as Y
    from .dsl import format_bvp_spec, parse_bvp_spec

    if bool(cfg["builtin"]) == bool(cfg["spec"]):
        raise UsageError("check-ellipticity needs exactly one of --builtin or --spec")
    if cfg["builtin"]:
        spec = Y.builtin_spec(cfg["builtin"])
    else:
        spec = parse_bvp_spec(Path(cfg["spec"]).read_text())
    etas = [Y.parse_eta(e) for e in (cfg["eta"] or DEFAULT_ETAS)]
    cfg["eta"] = [f"{a},{b}" for a, b in etas]
    verdict = Y.check_spec(spec, etas)
    samples = verdict.samples
    ok = all(s["properly_elliptic"] and s["complementing"] for s in samples)
    report = {
        "system": spec.name,
        "unknowns": list(spec.unknowns),
        "spec": format_bvp_spec(spec),
        "properly_elliptic": all(s["properly_elliptic"] for s in samples),
        "complementing": all(bool(s["complementing"]) for s in samples),
        "l": samples[0]["l"],
        "l_plus": samples[0]["l_plus"],
        "samples_agree": Y.verdicts_agree(verdict),
        "samples": samples,
    }
    return report, ok and report["samples_agree"]


def _norm_rows(grid, res, delta=0.5):
    from .geometry import weighted_norm

    rows = {}
    for name in ("E", "F", "H"):
        val = np.asarray(getattr(res, name))
        inner = val[..., 1:-1, :, :]
        rows[name] = {"sup": float(np.max(np.abs(val))), "sup_interior": float(np.max(np.abs(inner))),
                      "weighted_c0": weighted_norm(grid, val, 0, delta)}
    return rows


def run_residual(cfg):
    from .systems import conformal, residual_II

    data, label = _projection_input(cfg, make_grid(cfg))
    grid = data.grid
    c = conformal(data)
    norms = _norm_rows(grid, residual_II(c))
    report = {"source": label, "grid": [grid.n_r, grid.n_theta, grid.n_phi], "residual": norms}
    ok = True
    if cfg["tol"] is not None:
        ok = all(v["sup_interior"] <= cfg["tol"] for v in norms.values())
        report["passed"] = ok
    return report, ok


def run_linearize_check(cfg):
    from .verification import linearization_suite, schwarzschild_background

    grid = make_grid(cfg)
    c, bd = schwarzschild_background(grid, float(cfg["mass"]))
    rows = linearization_suite(c, bd, np.random.default_rng(int(cfg["seed"])), float(cfg["tol"]),
                               cfg["gauge"])
    return {"background": f"schwarzschild M={cfg['mass']}", "checks": rows}, all(r["passed"] for r in rows)


def _parse_oracle_args(text):
    parts = [float(x) for x in text.split(",") if x.strip()]
    if not 1 <= len(parts) <= 2:
        raise UsageError(f"expected M[,a], got {text!r}")
    return parts[0], parts[1] if len(parts) == 2 else 0.0


def _init_data(cfg, grid):
    from .exact import oracle
    from .io import read_triple
    from .systems import conformal

    spec = cfg["init"]
    if spec.startswith("builtin:"):
        rest = spec[len("builtin:"):].split(":")
        family = rest[0]
        M, a = _parse_oracle_args(rest[1]) if len(rest) > 1 else (0.0, 0.0)
        return conformal(oracle(grid, family, M, a)).fd_copy()
    data = read_triple(spec)
    if data.grid.metadata() != grid.metadata():
        raise UsageError("initial fields live on a different grid than --grid/--rmin/--rmax/--order")
    return conformal(data).fd_copy() if type(data).__name__ == "ProjectionData" else data


def run_solve(cfg):
    from .exact import oracle
    from .io import read_boundary_data, write_triple
    from .solver import LinearSolveError, SolveConfig, SolverDivergence, continuation
    from .systems import boundary_map_Pi, conformal

    grid = make_grid(cfg)
    init = _init_data(cfg, grid)
    gauge = {"div": "divergence", "divergence": "divergence", "bianchi": "bianchi"}[cfg["gauge"]]
    bnd = cfg["boundary"].strip()
    target_bg = init
    if bnd.startswith("from-oracle"):
        M, a = _parse_oracle_args(bnd[len("from-oracle"):].strip() or "0.1")
        family = "kerr" if a else ("schwarzschild" if M else "minkowski")
        p = oracle(grid, family, M, a)
        bd_end = boundary_map_Pi(p)
        target_bg = conformal(p).fd_copy()
    else:
        bgrid, bd_end = read_boundary_data(Path(bnd).resolve())
        if bgrid.metadata() != grid.metadata():
            raise UsageError("boundary data grid differs from the run grid")
    bd_start = boundary_map_Pi(conformal(init, "to_projection"))
    scfg = SolveConfig(gauge=gauge, tol=float(cfg["tol"]), max_steps=int(cfg["max_steps"]),
                       continuation_steps=int(cfg["steps"]))
    try:
        path = continuation(bd_start, bd_end, scfg.continuation_steps, scfg, init=init,
                            background_start=init, background_end=target_bg)
    except (SolverDivergence, LinearSolveError) as exc:
        return {"converged": False, "message": str(exc)}, False
    t, sol, rep = path[-1]
    steps = []
    for tt, _, r in path:
        d = r.to_dict()
        d.pop("wall_time")
        steps.append({"t": float(tt), **d})
    report = {"converged": bool(rep.converged), "final_residual": rep.final_residual,
              "gauge_norm": rep.gauge_norm, "gauge_relative": rep.gauge_relative,
              "adm_mass": rep.adm_mass, "path": steps}
    if cfg["out"]:
        files = write_triple(Path(cfg["out"]) / "solution", sol, "conformal")
        report["artifacts"] = [str(f) for f in files]
    return report, bool(rep.converged)


def run_oracle(cfg):
    from .exact import oracle
    from .io import write_boundary_data, write_triple
    from .systems import boundary_map_Pi

    grid = make_grid(cfg)
    p = oracle(grid, cfg["family"], float(cfg["mass"]), float(cfg["spin"]), psi=cfg["psi"])
    bd = boundary_map_Pi(p)
    report = {"family": cfg["family"], "boundary": _boundary_summary(bd)}
    if cfg["out"]:
        out = Path(cfg["out"])
        files = write_triple(out / "fields", p, "projection")
        files.append(write_boundary_data(out / "boundary.csv", grid, bd))
        report["artifacts"] = [str(f) for f in files]
    return report, True


def _boundary_summary(bd):
    def stats(a):
        a = np.real(np.asarray(a))
        return {"min": float(a.min()), "max": float(a.max())}

    return {"gamma_tt": stats(bd.gamma[0]), "gamma_tp": stats(bd.gamma[1]),
            "gamma_pp": stats(bd.gamma[2]), "lam": stats(bd.lam), "f": stats(bd.f)}


def run_boundary_map(cfg):
    from .systems import boundary_map_Pi

    data, label = _projection_input(cfg, make_grid(cfg))
    grid = data.grid
    bd = boundary_map_Pi(data)
    report = {"source": label, "radius": grid.r_min, "boundary": _boundary_summary(bd)}
    ok = True
    if label == "schwarzschild":
        R, M = grid.r_min, float(cfg["mass"])
        H = 2.0 / R * np.sqrt(1.0 - 2.0 * M / R)
        err = {"gamma": float(np.max(np.abs(bd.gamma - np.array([1.0, 0.0, 1.0])[:, None, None]))),
               "lam": float(np.max(np.abs(bd.lam - H)) / H), "f": float(np.max(np.abs(bd.f)))}
        ok = all(v <= float(cfg["tol"]) for v in err.values())
        report["closed_form"] = {"lam": float(H), "relative_errors": err, "passed": ok}
    return report, ok


def run_norms(cfg):
    from .geometry import adm_mass, weighted_norm
    from .tensors import flat_metric

    data, label = _projection_input(cfg, make_grid(cfg))
    grid = data.grid
    k, delta = int(cfg["k"]), float(cfg["delta"])
    report = {
        "source": label,
        "grid": [grid.n_r, grid.n_theta, grid.n_phi],
        "weighted": {
            "g_minus_flat": weighted_norm(grid, np.real(data.g) - flat_metric(grid.shape), k, delta),
            "u": weighted_norm(grid, np.real(data.u), k, delta),
            "psi": weighted_norm(grid, np.real(data.psi), k, delta),
        },
    }
    try:
        report["adm_mass"] = float(adm_mass(grid, data.jet("g")))
    except ValueError as exc:
        report["adm_mass_error"] = str(exc)
    return report, True


def run_selfadjoint_check(cfg):
    from .verification import self_adjoint_study

    grid = make_grid(cfg)
    sizes = ((grid.n_r, grid.n_theta), (2 * grid.n_r, 2 * grid.n_theta))
    tol = float(cfg["tol"])
    rows = self_adjoint_study(cfg["background"], int(cfg["seed"]), int(cfg["pairs"]), grid.stencil_order,
                              sizes, grid.r_min, grid.r_max, float(cfg["mass"]))
    checks = {
        "decreases_under_refinement": rows[1]["max_defect"] < rows[0]["max_defect"],
        "finest_within_tol": rows[1]["max_defect"] <= tol,
        "violating_pair_detected": rows[1]["violating_defect"] >= 10.0 * tol,
    }
    return {"grids": rows, "checks": checks}, all(checks.values())


RUNNERS = {
    "check-ellipticity": run_check_ellipticity,
    "residual": run_residual,
    "linearize-check": run_linearize_check,
    "solve": run_solve,
    "oracle": run_oracle,
    "boundary-map": run_boundary_map,
    "norms": run_norms,
    "selfadjoint-check": run_selfadjoint_check,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def dispatch(argv=None, stdout=None):
    """Run one verb; returns the exit code."""
    from .grid import GridError
    from .symbols import SymbolError

    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    try:
        cfg = resolve_config(args)
        body, ok = RUNNERS[args.verb](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SymbolError, GridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = _plain({"verb": args.verb, "config": cfg, "passed": bool(ok), "result": body})
    text = yaml.safe_dump(report, sort_keys=True, default_flow_style=False)
    stdout.write(text)
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.yaml").write_text(text)
    return 0 if ok else 1


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
