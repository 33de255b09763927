"""Small dense linear-algebra kernel.

Vectors and matrices are plain float64 numpy arrays. The helpers here only
add the contract checks the optimizers rely on (shape agreement, finiteness,
positive definiteness).
"""

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import ContractError, SingularMatrixError


def as_vector(v, dim=None, name="vector"):
    """Return ``v`` as a 1-D float64 array, checking shape and finiteness."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ContractError(f"{name} has dim {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    return arr


def as_matrix(A, name="matrix", symmetric=False):
    arr = np.asarray(A, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ContractError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite entries")
    if symmetric:
        if arr.shape[0] != arr.shape[1]:
            raise ContractError(f"{name} must be square, got shape {arr.shape}")
        if not np.array_equal(arr, arr.T):
            raise ContractError(f"{name} is not exactly symmetric")
    return arr


def symmetrize(A):
    """Exactly symmetric copy of ``A`` (average with its transpose)."""
    A = np.asarray(A, dtype=np.float64)
    S = 0.5 * (A + A.T)
    # (a + b)/2 and (b + a)/2 agree bitwise, but keep it explicit
    return np.triu(S) + np.triu(S, 1).T


def matvec(A, v):
    """``A @ v`` with a dimension check; inputs are not mutated."""
    A = as_matrix(A, "A")
    v = as_vector(v, name="v")
    if A.shape[1] != v.shape[0]:
        raise ContractError(f"matvec: A has {A.shape[1]} columns but v has dim {v.shape[0]}")
    return A @ v


def cholesky(A):
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    A = as_matrix(A, "A")
    if A.shape[0] != A.shape[1]:
        raise ContractError(f"cholesky: matrix must be square, got {A.shape}")
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix is not positive definite: {exc}") from exc


def solve_spd(A, b):
    """Solve ``A v = b`` for symmetric positive-definite ``A``.

    Uses a Cholesky factorization followed by two triangular solves. Raises
    :class:`SingularMatrixError` if a non-positive pivot is met.
    """
    A = as_matrix(A, "A")
    b = as_vector(b, name="b")
    if A.shape[0] != b.shape[0]:
        raise ContractError(f"solve_spd: A is {A.shape} but b has dim {b.shape[0]}")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(A).max())):
        raise ContractError("solve_spd: matrix is not symmetric")
    Lf = cholesky(A)
    z = solve_triangular(Lf, b, lower=True)
    v = solve_triangular(Lf.T, z, lower=False)
    # one step of iterative refinement keeps the residual at roundoff level
    r = b - A @ v
    v = v + solve_triangular(Lf.T, solve_triangular(Lf, r, lower=True), lower=False)
    return v


def extreme_eigenvalues(A):
    """(smallest, largest) eigenvalue of a symmetric matrix."""
    w = np.linalg.eigvalsh(as_matrix(A, "A"))
    return float(w[0]), float(w[-1])


def spectral_norm(A):
    return float(np.linalg.norm(as_matrix(A, "A"), 2))


def random_orthogonal(dim, rng):
    """Haar-distributed orthogonal matrix from a numpy ``Generator``."""
    Z = rng.standard_normal((dim, dim))
    Qm, R = np.linalg.qr(Z)
    return Qm * np.sign(np.diag(R))


def random_spd(dim, rng, eig_min=1.0, eig_max=10.0):
    """Random SPD matrix with eigenvalues spread evenly in [eig_min, eig_max]."""
    U = random_orthogonal(dim, rng)
    eigs = np.linspace(eig_min, eig_max, dim) if dim > 1 else np.array([eig_min])
    return symmetrize((U * eigs) @ U.T)
