"""Optional numba acceleration for the hot kernels.

Two kernels dominate run time: applying gathered finite-difference stencils
along one grid axis, and the pointwise Christoffel/Ricci contraction. Each has
a compiled loop version and a vectorised numpy version with identical results.
Set ``ARTIFACT_DISABLE_NUMBA=1`` to force the numpy path.
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_INSTALLED = False

NUMBA_DISABLED = os.getenv("ARTIFACT_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")


def optional_njit(*args, **kwargs):
    def decorator(func):
        if NUMBA_INSTALLED and not NUMBA_DISABLED:
            return njit(*args, **kwargs)(func)
        return func

    return decorator


def using_numba():
    return NUMBA_INSTALLED and not NUMBA_DISABLED


# ---------------------------------------------------------------- stencils


@optional_njit(cache=True)
def _gather_stencil_jit(idx, coef, arr, centred):
    n_out, width = idx.shape
    m = arr.shape[1]
    out = np.zeros((n_out, m), dtype=arr.dtype)
    for i in range(n_out):
        for k in range(width):
            c = coef[i, k]
            if c == 0.0:
                continue
            row = idx[i, k]
            if centred:
                for j in range(m):
                    out[i, j] += c * (arr[row, j] - arr[i, j])
            else:
                for j in range(m):
                    out[i, j] += c * arr[row, j]
    return out


def _gather_stencil_numpy(idx, coef, arr, centred):
    gathered = arr[idx]
    if centred:
        gathered = gathered - arr[: idx.shape[0], None, :]
    return np.einsum("ok,okm->om", coef, gathered)


def gather_stencil(idx, coef, arr, centred=False):
    """Return ``out[i] = sum_k coef[i, k] * arr[idx[i, k]]`` for a 2-d ``arr``.

    With ``centred`` the sum is taken over differences ``arr[idx] - arr[i]``,
    which is the same for zero-sum weights but exactly zero on constants.
    """
    arr = np.ascontiguousarray(arr)
    if using_numba():
        return _gather_stencil_jit(idx, coef, arr, centred)
    return _gather_stencil_numpy(idx, coef, arr, centred)


# ---------------------------------------------------------------- curvature


@optional_njit(cache=True)
def _christoffel_ricci_jit(ginv, dg, ddg):
    n = ginv.shape[2]
    dt = ginv.dtype
    gam = np.zeros((3, 3, 3, n), dtype=dt)
    dgam = np.zeros((3, 3, 3, 3, n), dtype=dt)
    ric = np.zeros((3, 3, n), dtype=dt)
    low = np.zeros((3, 3, 3), dtype=dt)
    dlow = np.zeros((3, 3, 3, 3), dtype=dt)
    dinv = np.zeros((3, 3, 3), dtype=dt)
    for p in range(n):
        for l in range(3):
            for i in range(3):
                for j in range(3):
                    low[l, i, j] = 0.5 * (dg[i, j, l, p] + dg[j, i, l, p] - dg[l, i, j, p])
                    for m in range(3):
                        dlow[m, l, i, j] = 0.5 * (ddg[m, i, j, l, p] + ddg[m, j, i, l, p] - ddg[m, l, i, j, p])
        for m in range(3):
            for k in range(3):
                for l in range(3):
                    acc = 0.0 * ginv[0, 0, p]
                    for a in range(3):
                        for b in range(3):
                            acc -= ginv[k, a, p] * dg[m, a, b, p] * ginv[b, l, p]
                    dinv[m, k, l] = acc
        for k in range(3):
            for i in range(3):
                for j in range(3):
                    acc = 0.0 * ginv[0, 0, p]
                    for l in range(3):
                        acc += ginv[k, l, p] * low[l, i, j]
                    gam[k, i, j, p] = acc
                    for m in range(3):
                        acc2 = 0.0 * ginv[0, 0, p]
                        for l in range(3):
                            acc2 += dinv[m, k, l] * low[l, i, j] + ginv[k, l, p] * dlow[m, l, i, j]
                        dgam[m, k, i, j, p] = acc2
        for i in range(3):
            for j in range(3):
                acc = 0.0 * ginv[0, 0, p]
                for k in range(3):
                    acc += dgam[k, k, i, j, p] - dgam[j, k, i, k, p]
                    for l in range(3):
                        acc += gam[k, k, l, p] * gam[l, i, j, p] - gam[k, j, l, p] * gam[l, i, k, p]
                ric[i, j, p] = acc
    return gam, dgam, ric


def _christoffel_ricci_numpy(ginv, dg, ddg):
    low = 0.5 * (np.einsum("ijlp->lijp", dg) + np.einsum("jilp->lijp", dg) - dg)
    dlow = 0.5 * (
        np.einsum("mijlp->mlijp", ddg) + np.einsum("mjilp->mlijp", ddg) - ddg
    )
    dinv = -np.einsum("kap,mabp,blp->mklp", ginv, dg, ginv)
    gam = np.einsum("klp,lijp->kijp", ginv, low)
    dgam = np.einsum("mklp,lijp->mkijp", dinv, low) + np.einsum("klp,mlijp->mkijp", ginv, dlow)
    ric = (
        np.einsum("kkijp->ijp", dgam)
        - np.einsum("jkikp->ijp", dgam)
        + np.einsum("kklp,lijp->ijp", gam, gam)
        - np.einsum("kjlp,likp->ijp", gam, gam)
    )
    return gam, dgam, ric


def christoffel_ricci(ginv, dg, ddg):
    """Christoffel symbols, their partials and the Ricci tensor at each node.

    Inputs are flattened over nodes (last axis): ``ginv[i, j, p]``,
    ``dg[k, i, j, p] = d_k g_ij`` and ``ddg[k, l, i, j, p] = d_k d_l g_ij``.
    Returns ``gam[k, i, j]``, ``dgam[m, k, i, j] = d_m gam[k, i, j]`` and
    ``ric[i, j]``.
    """
    ginv = np.ascontiguousarray(ginv)
    dg = np.ascontiguousarray(dg)
    ddg = np.ascontiguousarray(ddg)
    if using_numba():
        return _christoffel_ricci_jit(ginv, dg, ddg)
    return _christoffel_ricci_numpy(ginv, dg, ddg)
