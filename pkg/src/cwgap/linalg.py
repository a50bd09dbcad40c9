"""Small dense symmetric linear algebra: Jacobi eigensolver, Cholesky,
power-iteration two-norm, symmetric matrix square roots."""

from typing import NamedTuple

import numpy as np

from .errors import ConfigError, NotSPDError, NumericalFailure, UsageError

MAX_DIM = 2048
JACOBI_MAX_DIM = 96  # above this eigen_sym hands off to LAPACK (see method=)
SYM_TOL = 1e-12


class EigenResult(NamedTuple):
    values: np.ndarray   # sorted descending
    vectors: np.ndarray  # column i pairs with values[i]


def as_square(A, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"{name} must be square, got shape {A.shape}")
    if A.shape[0] > MAX_DIM:
        raise ConfigError(f"{name} has dimension {A.shape[0]} > cap {MAX_DIM}")
    if not np.all(np.isfinite(A)):
        raise UsageError(f"{name} has non-finite entries")
    return A


def check_symmetric(A, name="matrix"):
    """Validate and return A as a float array; raises UsageError if asymmetric."""
    A = as_square(A, name)
    bad = np.abs(A - A.T) > SYM_TOL * np.maximum(1.0, np.abs(A))
    if np.any(bad):
        raise UsageError(f"{name} is not symmetric")
    return A


def _jacobi(A, max_sweeps=100, rel_tol=1e-14):
    n = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    norm_f = np.linalg.norm(A)
    if norm_f == 0.0 or n == 1:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off <= rel_tol * norm_f:
            return np.diag(A).copy(), V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                scale = abs(A[p, p]) + abs(A[q, q])
                if scale + 1e3 * abs(apq) == scale:
                    # below rounding of the diagonal: drop it
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q]
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :]
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    raise NumericalFailure("Jacobi eigensolver did not converge in %d sweeps" % max_sweeps)


def eigen_sym(A, method="auto"):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    method: "jacobi" (cyclic Jacobi), "lapack" (numpy.linalg.eigh) or
    "auto" (Jacobi up to JACOBI_MAX_DIM, LAPACK beyond).
    """
    A = check_symmetric(A)
    if method == "auto":
        method = "jacobi" if A.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        w, V = _jacobi(A.copy())
    elif method == "lapack":
        w, V = np.linalg.eigh(0.5 * (A + A.T))
    else:
        raise UsageError(f"unknown eigen method {method!r}")
    order = np.argsort(-w, kind="stable")
    return EigenResult(w[order], V[:, order])


def cholesky_spd(A):
    """Lower-triangular L with A = L L^T. Raises NotSPDError on a non-positive pivot."""
    A = check_symmetric(A)
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            raise NotSPDError(f"matrix is not positive definite (pivot {j} = {d:.3e})")
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_lower(L, b):
    """Forward substitution for L y = b (b may be a matrix)."""
    b = np.array(b, dtype=float)
    y = np.zeros_like(b)
    for i in range(L.shape[0]):
        y[i] = (b[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def solve_upper(U, b):
    """Back substitution for U x = b."""
    b = np.array(b, dtype=float)
    x = np.zeros_like(b)
    for i in range(U.shape[0] - 1, -1, -1):
        x[i] = (b[i] - U[i, i + 1:] @ x[i + 1:]) / U[i, i]
    return x


def cho_solve(L, b):
    """Solve A x = b given the Cholesky factor L of A."""
    return solve_upper(L.T, solve_lower(L, b))


def cho_inverse(L):
    inv = cho_solve(L, np.eye(L.shape[0]))
    return 0.5 * (inv + inv.T)


def two_norm(M, iters=10000, tol=1e-12):
    """Largest singular value by power iteration on M^T M.

    Stops when the Rayleigh quotient changes by at most tol (relative).
    """
    M = as_square(M) if np.ndim(M) == 2 and np.shape(M)[0] == np.shape(M)[1] else np.asarray(M, float)
    if M.ndim != 2:
        raise UsageError("two_norm expects a matrix")
    if not np.any(M):
        return 0.0
    n = M.shape[1]
    # generic deterministic start; fall back to the heaviest column of M^T M
    v = 1.0 + 0.5 * np.cos(1.7 * np.arange(n) + 0.3)
    v /= np.linalg.norm(v)
    w = M.T @ (M @ v)
    if not np.any(w):
        G = M.T @ M
        v = G[:, np.argmax(np.sum(G * G, axis=0))]
        v = v / np.linalg.norm(v)
        w = M.T @ (M @ v)
    lam = v @ w
    for _ in range(iters):
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        w = M.T @ (M @ v)
        lam_new = v @ w
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return float(np.sqrt(max(lam_new, 0.0)))
        lam = lam_new
    raise NumericalFailure("power iteration for two_norm did not converge")


def sym_sqrt(A, inverse=False):
    """Symmetric square root (or inverse square root) of an SPD matrix."""
    w, V = eigen_sym(A)
    if np.any(w <= 0):
        raise NotSPDError("matrix square root needs a positive definite matrix")
    d = 1.0 / np.sqrt(w) if inverse else np.sqrt(w)
    R = (V * d) @ V.T
    return 0.5 * (R + R.T)
