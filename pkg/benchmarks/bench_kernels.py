"""Compare the compiled and numpy kernel paths.

Kernel timings run in this process against both implementations directly.
The end-to-end timing (residual evaluation on a Schwarzschild grid) runs in
a subprocess per path, toggled with ARTIFACT_DISABLE_NUMBA.

    python benchmarks/bench_kernels.py [--grid 64,32] [--repeat 5]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stationary_bvp import _accel

END_TO_END = """
import time
from stationary_bvp.exact import schwarzschild
from stationary_bvp.grid import Grid
from stationary_bvp.systems import conformal, residual_II
grid = Grid({nr}, {nt}, stencil_order=4)
c = conformal(schwarzschild(grid, 0.1)).fd_copy()
residual_II(c)
t = time.perf_counter()
for _ in range({repeat}):
    residual_II(c)
print((time.perf_counter() - t) / {repeat})
"""


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def stencil_case(n_nodes, width, m, rng):
    idx = rng.integers(0, n_nodes, size=(n_nodes, width))
    coef = rng.standard_normal((n_nodes, width))
    arr = rng.standard_normal((n_nodes, m))
    return idx, coef, arr


def curvature_case(n, rng):
    a = rng.standard_normal((3, 3, n)) * 0.1
    g = np.eye(3)[:, :, None] + 0.5 * (a + a.transpose(1, 0, 2))
    ginv = np.ascontiguousarray(np.linalg.inv(g.transpose(2, 0, 1)).transpose(1, 2, 0))
    dg = rng.standard_normal((3, 3, 3, n))
    dg = np.ascontiguousarray(0.5 * (dg + dg.transpose(0, 2, 1, 3)))
    ddg = rng.standard_normal((3, 3, 3, 3, n))
    ddg = 0.5 * (ddg + ddg.transpose(1, 0, 2, 3, 4))
    ddg = np.ascontiguousarray(0.5 * (ddg + ddg.transpose(0, 1, 3, 2, 4)))
    return ginv, dg, ddg


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--grid", default="64,32")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    nr, nt = (int(x) for x in args.grid.split(","))
    rng = np.random.default_rng(0)
    compiled = _accel.using_numba()
    print(f"numba active in this process: {compiled}")

    rows = []
    idx, coef, arr = stencil_case((nr + 1), 5, nt * 40, rng)
    fast = lambda: _accel._gather_stencil_jit(idx, coef, arr, True)  # noqa: E731
    slow = lambda: _accel._gather_stencil_numpy(idx, coef, arr, True)  # noqa: E731
    fast()
    err = float(np.max(np.abs(fast() - slow())))
    rows.append(("gather_stencil", best_of(fast, args.repeat), best_of(slow, args.repeat), err))

    ginv, dg, ddg = curvature_case((nr + 1) * nt, rng)
    fast = lambda: _accel._christoffel_ricci_jit(ginv, dg, ddg)  # noqa: E731
    slow = lambda: _accel._christoffel_ricci_numpy(ginv, dg, ddg)  # noqa: E731
    fast()
    err = max(float(np.max(np.abs(a - b))) for a, b in zip(fast(), slow()))
    rows.append(("christoffel_ricci", best_of(fast, args.repeat), best_of(slow, args.repeat), err))

    label = "compiled" if compiled else "loop (numba off)"
    print(f"{'kernel':<20}{label:>18}{'numpy':>12}{'speedup':>10}{'max diff':>12}")
    for name, tf, ts, err in rows:
        print(f"{name:<20}{tf * 1e3:>15.2f} ms{ts * 1e3:>9.2f} ms{ts / tf:>10.2f}{err:>12.1e}")

    print(f"\nresidual_II on a {nr}x{nt} Schwarzschild grid (mean of {args.repeat}):")
    code = END_TO_END.format(nr=nr, nt=nt, repeat=args.repeat)
    for flag, name in (("0", "numba"), ("1", "numpy")):
        env = dict(os.environ, ARTIFACT_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        print(f"  {name:<6} {float(out.stdout.strip()) * 1e3:9.1f} ms")


if __name__ == "__main__":
    main()
