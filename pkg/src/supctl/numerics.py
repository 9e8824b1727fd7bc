"""Dense small-matrix kernels.

Every routine works on plain ``numpy`` arrays and is a pure function of its
arguments. Dimensions in this package stay small (at most a few dozen
states), so dense decompositions are used throughout.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    InstabilityError,
    NonFiniteError,
)

__all__ = [
    "as_matrix",
    "as_square",
    "spectral_radius",
    "min_singular_value",
    "max_singular_value",
    "leading_singular_triple",
    "pseudo_inverse",
    "matrix_power",
    "hinf_norm",
    "dlyap",
    "PINV_RELATIVE_TOL",
]

PINV_RELATIVE_TOL = 1e-10
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array.

    Scalars become 1x1 matrices and 1-D inputs become column vectors.
    """
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def as_square(A, name: str = "A") -> np.ndarray:
    arr = as_matrix(A, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = as_square(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def min_singular_value(M) -> float:
    """Smallest gain ``min ||M x|| / ||x||`` over nonzero ``x``.

    For a wide matrix (fewer rows than columns) the null space is nontrivial
    and the result is 0.
    """
    M = as_matrix(M)
    rows, cols = M.shape
    if cols == 0:
        return 0.0
    if rows < cols:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def max_singular_value(M) -> float:
    """Operator (spectral) norm."""
    M = as_matrix(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def leading_singular_triple(M) -> tuple[float, np.ndarray, np.ndarray]:
    """Largest singular value with its unit left/right singular vectors.

    The sign is fixed so that the first nonzero component of ``u`` is
    positive, which makes precomputed directions reproducible.

    Raises
    ------
    DegenerateInputError
        If ``M`` is the zero matrix.
    """
    M = as_matrix(M)
    if M.size == 0 or not np.any(M):
        raise DegenerateInputError("leading singular vectors of a zero matrix are undefined")
    U, s, Vt = np.linalg.svd(M)
    sigma = float(s[0])
    u = U[:, 0].copy()
    v = Vt[0, :].copy()
    nz = np.flatnonzero(np.abs(u) > 1e-12 * np.max(np.abs(u)))
    if u[nz[0]] < 0:
        u = -u
        v = -v
    return sigma, u, v


def pseudo_inverse(M, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with singular-value truncation.

    Parameters
    ----------
    M : array_like
        Matrix to invert.
    tol : float, optional
        Absolute threshold; singular values below it are treated as zero.
        Defaults to ``1e-10 * sigma_max(M)``.
    """
    M = as_matrix(M)
    rows, cols = M.shape
    if M.size == 0:
        return np.zeros((cols, rows))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if tol is None:
        tol = PINV_RELATIVE_TOL * s[0]
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    keep = s > tol
    if not np.any(keep):
        return np.zeros((cols, rows))
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


def matrix_power(A, k: int) -> np.ndarray:
    """``A**k`` by repeated squaring; ``A**0`` is the identity."""
    A = as_square(A)
    k = int(k)
    if k < 0:
        raise ValueError("k must be nonnegative")
    result = np.eye(A.shape[0])
    base = A.copy()
    while k:
        if k & 1:
            result = result @ base
        k >>= 1
        if k:
            base = base @ base
    return result


def _freq_gains(C, A, B, thetas: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    z = np.exp(1j * thetas)
    pencil = z[:, None, None] * np.eye(n) - A[None, :, :]
    X = np.linalg.solve(pencil, np.broadcast_to(B, (len(thetas),) + B.shape))
    G = C[None, :, :] @ X
    if min(G.shape[1:]) == 1:
        return np.sqrt(np.sum(np.abs(G) ** 2, axis=(1, 2)))
    return np.linalg.svd(G, compute_uv=False)[:, 0]


def _golden_max(f, lo: float, hi: float, xtol: float = 1e-12, max_iter: int = 200):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < xtol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return max(fc, fd)


def hinf_norm(C, A, B=None, resolution: int = 4096, n_peaks: int = 3) -> float:
    """H-infinity norm of the discrete-time system ``(C, A, B)``.

    ``sigma_max(C (e^{i theta} I - A)^{-1} B)`` is evaluated on a uniform grid
    and the largest local peaks are polished by golden-section search. With
    real matrices the frequency response is conjugate-symmetric, so the grid
    covers ``[0, pi]``. ``B=None`` means the identity.

    Raises
    ------
    InstabilityError
        If ``rho(A) >= 1``.
    """
    A = as_square(A)
    n = A.shape[0]
    C = as_matrix(C, "C")
    B = np.eye(n) if B is None else as_matrix(B, "B")
    if C.shape[1] != n or B.shape[0] != n:
        raise DimensionError(f"incompatible shapes C{C.shape}, A{A.shape}, B{B.shape}")
    if n == 0:
        return 0.0
    if spectral_radius(A) >= 1.0:
        raise InstabilityError("H-infinity norm is undefined for rho(A) >= 1")
    thetas = np.linspace(0.0, np.pi, max(int(resolution), 3))
    gains = _freq_gains(C, A, B, thetas)
    best = float(np.max(gains))
    interior = np.flatnonzero(
        np.r_[gains[0] >= gains[1], (gains[1:-1] >= gains[:-2]) & (gains[1:-1] >= gains[2:]),
              gains[-1] >= gains[-2]]
    )
    peaks = interior[np.argsort(gains[interior])[::-1][:n_peaks]]
    step = thetas[1] - thetas[0]

    def f(theta):
        return float(_freq_gains(C, A, B, np.array([theta]))[0])

    for k in peaks:
        lo = max(0.0, thetas[k] - step)
        hi = min(np.pi, thetas[k] + step)
        best = max(best, _golden_max(f, lo, hi))
    return best


def dlyap(A, Q, tol: float = 1e-12, max_doublings: int = 64) -> np.ndarray:
    """Solve ``A^T P A - P = -Q`` for a Schur-stable ``A``.

    The series ``P = sum_k (A^T)^k Q A^k`` is summed in doubling blocks
    (``P <- P + A_k^T P A_k``, ``A_k <- A_k^2``), stopped once the increment's
    norm falls below ``tol`` relative to ``max(1, ||P||)``.
    """
    A = as_square(A)
    Q = as_square(Q, "Q")
    if Q.shape != A.shape:
        raise DimensionError(f"Q{Q.shape} must match A{A.shape}")
    if not np.allclose(Q, Q.T, atol=1e-12 * max(1.0, np.max(np.abs(Q)))):
        raise ValueError("Q must be symmetric")
    if spectral_radius(A) >= 1.0:
        raise InstabilityError("dlyap requires rho(A) < 1")
    P = Q.copy()
    Ak = A.copy()
    for _ in range(max_doublings):
        inc = Ak.T @ P @ Ak
        P = P + inc
        Ak = Ak @ Ak
        if np.linalg.norm(inc) < tol * max(1.0, np.linalg.norm(P)):
            break
    return 0.5 * (P + P.T)
