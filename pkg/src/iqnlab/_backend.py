"""Dense update kernels, numba-accelerated with a pure-numpy fallback.

The environment variable ``IQNLAB_BACKEND`` selects the implementation:
``numba`` (require numba, fail if missing), ``numpy`` (force the fallback),
or unset/``auto`` (use numba when importable). The numba kernels are fused
single-pass loops and the numpy kernels are vectorized expressions of the
same formulas; results agree to a few ulps (reductions and the
symmetrization associate differently).

Kernels return their critical denominators alongside the result so callers
can raise typed errors; when a denominator falls below the supplied guard
the kernel returns its input unchanged and the caller must not use it.
"""

import os

import numpy as np

_requested = os.environ.get("IQNLAB_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"IQNLAB_BACKEND must be 'numba', 'numpy' or unset, got {_requested!r}"
    )

_use_numba = False
if _requested in ("auto", "numba"):
    try:
        import numba

        _use_numba = True
    except ImportError:
        if _requested == "numba":
            raise
        _use_numba = False

BACKEND = "numba" if _use_numba else "numpy"


# -- numpy fallback ---------------------------------------------------------

def _sm_update_numpy(a_inv, u, v, guard):
    w = a_inv @ u
    wt = a_inv.T @ v
    den = 1.0 + v @ w
    if abs(den) < guard:
        return a_inv, den
    return a_inv - np.outer(w, wt) / den, den


def _bfgs_kernel_numpy(b, ku, uku, u, guard_ubu, guard_uku):
    bu = b @ u
    ubu = u @ bu
    if ubu <= guard_ubu or uku <= guard_uku:
        return b, ubu
    out = b - np.outer(bu, bu) / ubu + np.outer(ku, ku) / uku
    return 0.5 * (out + out.T), ubu


def _dfp_kernel_numpy(b, ku, uku, u, guard_ubu, guard_uku):
    bu = b @ u
    ubu = u @ bu
    if ubu <= guard_ubu or uku <= guard_uku:
        return b, ubu
    c = 1.0 + ubu / uku
    out = b - (np.outer(ku, bu) + np.outer(bu, ku)) / uku + (c / uku) * np.outer(ku, ku)
    return 0.5 * (out + out.T), ubu


# -- numba fused loops ------------------------------------------------------

if _use_numba:

    @numba.njit(cache=True)
    def _sm_update_numba(a_inv, u, v, guard):
        d = a_inv.shape[0]
        w = a_inv @ u
        wt = a_inv.T @ v
        den = 1.0 + v @ w
        if abs(den) < guard:
            return a_inv, den
        out = np.empty_like(a_inv)
        inv_den = 1.0 / den
        for i in range(d):
            wi = w[i] * inv_den
            for j in range(d):
                out[i, j] = a_inv[i, j] - wi * wt[j]
        return out, den

    @numba.njit(cache=True)
    def _bfgs_kernel_numba(b, ku, uku, u, guard_ubu, guard_uku):
        d = b.shape[0]
        bu = b @ u
        ubu = u @ bu
        if ubu <= guard_ubu or uku <= guard_uku:
            return b, ubu
        out = np.empty_like(b)
        inv_ubu = 1.0 / ubu
        inv_uku = 1.0 / uku
        for i in range(d):
            bui = bu[i] * inv_ubu
            kui = ku[i] * inv_uku
            for j in range(d):
                out[i, j] = 0.5 * (b[i, j] + b[j, i]) - bui * bu[j] + kui * ku[j]
        return out, ubu

    @numba.njit(cache=True)
    def _dfp_kernel_numba(b, ku, uku, u, guard_ubu, guard_uku):
        d = b.shape[0]
        bu = b @ u
        ubu = u @ bu
        if ubu <= guard_ubu or uku <= guard_uku:
            return b, ubu
        out = np.empty_like(b)
        inv_uku = 1.0 / uku
        c = 1.0 + ubu * inv_uku
        for i in range(d):
            kui = ku[i] * inv_uku
            bui = bu[i] * inv_uku
            cki = c * kui
            for j in range(d):
                out[i, j] = (0.5 * (b[i, j] + b[j, i])
                             - kui * bu[j] - bui * ku[j] + cki * ku[j])
        return out, ubu

    sm_update = _sm_update_numba
    bfgs_kernel = _bfgs_kernel_numba
    dfp_kernel = _dfp_kernel_numba
else:
    sm_update = _sm_update_numpy
    bfgs_kernel = _bfgs_kernel_numpy
    dfp_kernel = _dfp_kernel_numpy
