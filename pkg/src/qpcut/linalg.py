"""Dense symmetric linear algebra primitives shared by the solver modules.

Everything here is small and dense on purpose: target problems have at most
a few hundred variables and constraint rows, so full eigendecompositions and
SVD-based rank decisions are both cheap and far more dependable than sparse
or iterative alternatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymEig",
    "sym_eig",
    "psd_project",
    "nullspace_basis",
    "reduced_hessian",
]


@dataclass(frozen=True)
class SymEig:
    """Full spectral decomposition S = V diag(values) V^T.

    values are ascending, vectors hold the matching orthonormal columns.
    """

    values: np.ndarray
    vectors: np.ndarray


def _as_symmetric(S: np.ndarray, name: str = "S") -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError(f"{name} contains non-finite entries")
    scale = 1.0 + np.abs(S).max(initial=0.0)
    if np.abs(S - S.T).max(initial=0.0) > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (S + S.T)


def sym_eig(S: np.ndarray) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Raises ``ValueError`` on non-symmetric or non-finite input and lets
    LAPACK's non-convergence error propagate (pathological input).
    """
    S = _as_symmetric(S)
    values, vectors = np.linalg.eigh(S)
    return SymEig(values=values, vectors=vectors)


def psd_project(S: np.ndarray) -> np.ndarray:
    """Nearest positive semidefinite matrix: clamp negative eigenvalues to 0."""
    eig = sym_eig(S)
    clipped = np.maximum(eig.values, 0.0)
    P = (eig.vectors * clipped) @ eig.vectors.T
    return 0.5 * (P + P.T)


def nullspace_basis(A: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (n x (n-r) columns) of {x : A x = 0}.

    Rank is decided by singular values relative to the largest one:
    sigma_i <= tol * sigma_max counts as zero.  An empty ``A`` (zero rows)
    yields the identity; a full-rank square system yields an (n, 0) array.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"A must be 2-d, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = A.shape[1]
    if A.shape[0] == 0:
        return np.eye(n)
    _, sigma, Vt = np.linalg.svd(A, full_matrices=True)
    smax = sigma[0] if sigma.size else 0.0
    rank = int(np.sum(sigma > tol * smax)) if smax > 0 else 0
    return Vt[rank:].T.copy()


def reduced_hessian(Q: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (Z^T Q Z, its minimum eigenvalue).

    An empty basis encodes a zero-dimensional null space, for which the
    restriction counts as positive definite: the reduced matrix is 0x0 and
    the reported minimum eigenvalue is +inf.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.shape[1] == 0:
        return np.zeros((0, 0)), np.inf
    Q = _as_symmetric(np.asarray(Q, dtype=float), "Q")
    R = Z.T @ Q @ Z
    R = 0.5 * (R + R.T)
    lam_min = float(np.linalg.eigvalsh(R)[0])
    return R, lam_min
