"""Brute-force global QP solver for small instances.

Validation scaffolding only: enumerates every face of the polytope (subsets
of rows with independent normals), minimizes the objective on each face, and
keeps the best feasible candidate.  The global minimum of a quadratic over a
bounded polytope is attained at a stationary point of some face, so the
enumeration is exhaustive for the covered sizes.  Never used by the solve
path.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

from .instance import ReducedInstance

__all__ = ["OracleResult", "OracleBudgetError", "global_qp_oracle", "grid_min"]

_FEAS_TOL = 1e-10


class OracleBudgetError(ValueError):
    """Instance is too large for exhaustive enumeration."""


@dataclass(frozen=True)
class OracleResult:
    value: float
    point: np.ndarray
    enumerated: int


def _face_minimum(Q, d, A, b, subset, tol=1e-9):
    """Stationary minimizer of the objective on the affine face A_I x = b_I.

    Returns None when the face is rank-deficient (same face appears for a
    smaller subset) or when the restricted quadratic has a descent direction
    (the face minimum then lies on an already-enumerated subface).
    """
    A_I = A[list(subset)]
    b_I = b[list(subset)]
    k = len(subset)
    if k:
        U, sigma, Vt = np.linalg.svd(A_I, full_matrices=True)
        rank = int(np.sum(sigma > 1e-12 * sigma[0])) if sigma.size and sigma[0] > 0 else 0
        if rank < k:
            return None
        x_p = np.linalg.lstsq(A_I, b_I, rcond=None)[0]
        Z = Vt[rank:].T
    else:
        x_p = np.zeros(A.shape[1])
        Z = np.eye(A.shape[1])
    if Z.shape[1] == 0:
        return x_p
    H = Z.T @ Q @ Z
    H = 0.5 * (H + H.T)
    g = Z.T @ (Q @ x_p + d)
    w, V = np.linalg.eigh(H)
    scale = max(1.0, abs(w).max(initial=0.0))
    if w[0] < -tol * scale:
        return None
    small = w <= tol * scale
    if np.any(small):
        if np.linalg.norm(V[:, small].T @ g) > tol * (1.0 + np.linalg.norm(g)):
            return None  # unbounded descent along the face; min on a subface
    big = ~small
    t = -V[:, big] @ ((V[:, big].T @ g) / w[big]) if np.any(big) else np.zeros(Z.shape[1])
    return x_p + Z @ t


def global_qp_oracle(inst: ReducedInstance, max_n: int = 4, max_m: int = 12) -> OracleResult:
    """Exhaustive global minimum for n <= 4, M <= 12 (2^M face budget)."""
    n, M = inst.n, inst.m
    if n > max_n or M > max_m:
        raise OracleBudgetError(f"oracle budget exceeded: n={n} (max {max_n}), M={M} (max {max_m})")
    Q, d, A, b = inst.Q, inst.d, inst.A, inst.b
    best_val = np.inf
    best_x = None
    count = 0
    for size in range(min(n, M) + 1):
        for subset in combinations(range(M), size):
            count += 1
            x = _face_minimum(Q, d, A, b, subset)
            if x is None:
                continue
            if np.max(A @ x - b, initial=0.0) > _FEAS_TOL:
                continue
            val = inst.objective(x)
            if val < best_val:
                best_val = val
                best_x = x
    if best_x is None:
        raise ValueError("no feasible candidate found; region appears empty")
    return OracleResult(value=float(best_val), point=best_x, enumerated=count)


def grid_min(inst: ReducedInstance, points_per_axis: int) -> float:
    """Minimum of the objective over feasible points of a uniform grid on the
    region's bounding box; +inf when no grid point is feasible.

    Upper bound on the true minimum; cross-check for the face enumeration.
    """
    if inst.n > 3:
        raise OracleBudgetError("grid_min supports n <= 3 only")
    n = inst.n
    lo = np.empty(n)
    hi = np.empty(n)
    for j in range(n):
        c = np.zeros(n)
        c[j] = 1.0
        r1 = linprog(c, A_ub=inst.A, b_ub=inst.b, bounds=[(None, None)] * n, method="highs")
        r2 = linprog(-c, A_ub=inst.A, b_ub=inst.b, bounds=[(None, None)] * n, method="highs")
        if r1.status != 0 or r2.status != 0:
            return np.inf
        lo[j], hi[j] = r1.fun, -r2.fun
    axes = [np.unique(np.linspace(lo[j], hi[j], points_per_axis)) for j in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    feas = np.all(pts @ inst.A.T <= inst.b[None, :] + 1e-9, axis=1)
    if not np.any(feas):
        return np.inf
    P = pts[feas]
    vals = np.einsum("ij,jk,ik->i", P, inst.Q, P) + 2.0 * P @ inst.d
    return float(vals.min())
