"""Dense symmetric-matrix kernels for quasi-Newton curvature maintenance.

Matrices are plain float64 ``numpy`` arrays. Symmetric operands are expected
(and outputs are explicitly symmetrized) but never silently repaired beyond
the ``0.5 * (M + M.T)`` averaging that stops floating-point drift.

The curvature operators take the reference matrix K only through its action
``ku = K @ u`` and the scalar ``uku = <u, K u>``. The two call sites need
nothing more: along a step direction ``K u`` is a gradient difference, and
along a basis vector it is a single Hessian column. This is what keeps each
update at O(d^2).
"""

import numpy as np
import scipy.linalg

from ._backend import bfgs_kernel, dfp_kernel, sm_update
from .errors import (
    DegenerateDirection,
    InvalidTau,
    NonPositiveDiagonal,
    SingularA,
    SingularUpdate,
)

DEFAULT_TOL = 1e-12


def _as_f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Return the symmetric part 0.5 * (M + M^T)."""
    return 0.5 * (m + m.T)


def sm_inverse_update(a_inv: np.ndarray, u: np.ndarray, v: np.ndarray,
                      tol: float = DEFAULT_TOL) -> np.ndarray:
    """Inverse of ``A + u v^T`` from ``a_inv = A^{-1}`` (Sherman-Morrison).

    Parameters
    ----------
    a_inv : (d, d) array
        Inverse of the current matrix A.
    u, v : (d,) arrays
        Rank-one factors of the additive update.
    tol : float
        Absolute threshold on the denominator ``1 + <v, A^{-1} u>``.

    Returns
    -------
    (d, d) array
        ``(A + u v^T)^{-1}``. When u is collinear with v the update
        preserves symmetry and the result is explicitly symmetrized.

    Raises
    ------
    SingularUpdate
        If ``|1 + <v, A^{-1} u>| < tol`` (the update destroys invertibility).
    """
    a_inv = _as_f64(a_inv)
    u = _as_f64(u)
    v = _as_f64(v)
    out, den = sm_update(a_inv, u, v, tol)
    if abs(den) < tol:
        raise SingularUpdate(f"rank-one update denominator {den:.3e} below {tol:.1e}")
    uu = u @ u
    vv = v @ v
    uv = u @ v
    if uu > 0.0 and vv > 0.0 and uv * uv >= (1.0 - 1e-12) * uu * vv:
        out = symmetrize(out)
    return out


def _curvature_guards(b, ku, u, tol):
    # Each denominator is compared against its own operand scale:
    # <u, Bu> ~ ||u||^2 ||B|| and uku ~ ||u|| ||Ku||. Coupling them would
    # reject healthy updates whenever B and K live on different scales.
    nu = np.linalg.norm(u)
    return (tol * nu * nu * np.max(np.abs(np.diag(b))),
            tol * nu * np.linalg.norm(ku))


def bfgs_update(b: np.ndarray, ku: np.ndarray, uku: float, u: np.ndarray,
                tol: float = DEFAULT_TOL) -> np.ndarray:
    """Generalized BFGS update of B toward K along direction u.

    Computes ``B - B u u^T B / <u, B u> + ku ku^T / uku`` where ``ku = K u``
    and ``uku = <u, K u>``. The result satisfies the secant property
    ``B_new @ u == ku`` and is symmetrized.

    Raises
    ------
    DegenerateDirection
        If ``<u, B u>`` or ``uku`` falls below the scaled tolerance.
    """
    b = _as_f64(b)
    ku = _as_f64(ku)
    u = _as_f64(u)
    guard_ubu, guard_uku = _curvature_guards(b, ku, u, tol)
    out, ubu = bfgs_kernel(b, ku, float(uku), u, guard_ubu, guard_uku)
    if ubu <= guard_ubu or uku <= guard_uku:
        raise DegenerateDirection(
            f"BFGS denominators <u,Bu>={ubu:.3e} (guard {guard_ubu:.3e}), "
            f"uku={uku:.3e} (guard {guard_uku:.3e})"
        )
    return out


def dfp_update(b: np.ndarray, ku: np.ndarray, uku: float, u: np.ndarray,
               tol: float = DEFAULT_TOL) -> np.ndarray:
    """DFP update of B toward K along direction u.

    Computes ``B - (ku u^T B + B u u^T ku^T)/uku + (1 + <u,Bu>/uku) ku ku^T/uku``
    with the same access pattern, secant property and error contract as
    :func:`bfgs_update`.
    """
    b = _as_f64(b)
    ku = _as_f64(ku)
    u = _as_f64(u)
    guard_ubu, guard_uku = _curvature_guards(b, ku, u, tol)
    out, ubu = dfp_kernel(b, ku, float(uku), u, guard_ubu, guard_uku)
    if ubu <= guard_ubu or uku <= guard_uku:
        raise DegenerateDirection(
            f"DFP denominators <u,Bu>={ubu:.3e} (guard {guard_ubu:.3e}), "
            f"uku={uku:.3e} (guard {guard_uku:.3e})"
        )
    return out


def broyden_update(tau: float, b: np.ndarray, ku: np.ndarray, uku: float,
                   u: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Restricted Broyden update: ``tau * DFP + (1 - tau) * BFGS``.

    The endpoints are exact: ``tau == 0`` returns the BFGS output and
    ``tau == 1`` the DFP output, bit for bit.

    Raises
    ------
    InvalidTau
        If tau is outside [0, 1].
    """
    if not 0.0 <= tau <= 1.0:
        raise InvalidTau(f"tau must lie in [0, 1], got {tau}")
    if tau == 0.0:
        return bfgs_update(b, ku, uku, u, tol)
    if tau == 1.0:
        return dfp_update(b, ku, uku, u, tol)
    return tau * dfp_update(b, ku, uku, u, tol) + (1.0 - tau) * bfgs_update(b, ku, uku, u, tol)


def greedy_vector(q_diag: np.ndarray, h_diag: np.ndarray,
                  tol: float = DEFAULT_TOL) -> int:
    """Index of the basis direction maximizing ``<e_i, Q e_i> / <e_i, H e_i>``.

    For standard basis vectors the quadratic-form ratio reduces to the ratio
    of diagonals, so only the two diagonals are needed. Ties break to the
    lowest index (0-based, indexing the diagonal arrays).

    Raises
    ------
    NonPositiveDiagonal
        If any reference diagonal entry is <= tol.
    """
    q_diag = np.asarray(q_diag, dtype=np.float64)
    h_diag = np.asarray(h_diag, dtype=np.float64)
    if np.any(h_diag <= tol):
        raise NonPositiveDiagonal(
            f"reference diagonal has entries <= {tol:.1e} (min {h_diag.min():.3e})"
        )
    return int(np.argmax(q_diag / h_diag))


def sigma_metric(a: np.ndarray, g: np.ndarray) -> float:
    """Approximation error ``sigma(G, A) = tr(A^{-1} G) - d`` for PD A.

    Zero iff G == A when G dominates A in the PSD order; the value is
    returned regardless of domination.

    Raises
    ------
    SingularA
        If the Cholesky factorization of A fails.
    """
    a = _as_f64(a)
    g = _as_f64(g)
    try:
        cf = scipy.linalg.cho_factor(a, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularA(f"Cholesky factorization failed: {exc}") from exc
    return float(np.trace(scipy.linalg.cho_solve(cf, g, check_finite=False)) - a.shape[0])


def psd_dominates(g: np.ndarray, a: np.ndarray, tol: float) -> bool:
    """True iff the smallest eigenvalue of ``G - A`` is >= -tol."""
    diff = symmetrize(_as_f64(g) - _as_f64(a))
    return bool(np.linalg.eigvalsh(diff)[0] >= -tol)
