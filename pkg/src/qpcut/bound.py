"""DNN relaxation bound with floating-point safeguards.

The relaxation lifts x to Y = [[X, x], [x^T, 1]] >= 0 (PSD) and asks the
conjugated matrix [ -A b; 0 1 ] Y [ -A b; 0 1 ]^T to be elementwise
nonnegative; its optimal value lower-bounds the QP.  The bound actually
reported is computed from the dual side: for any S >= 0 (PSD), T >= 0
(elementwise) and lambda with residual

    Delta = [[Q, d], [d^T, -lambda]] - S - B^T T B,      B = [-A b; 0^T 1],

every feasible x satisfies Phi(x) >= lambda + delta (1 + r0^2) where
delta = min(0, lambda_min(Delta)) and r0 is the certified enclosing radius.
That makes the output a valid bound no matter how approximately the conic
program was solved.

``assemble_dnn`` builds the primal (lifted-matrix) form of the relaxation.
``dnn_lower_bound`` solves the equivalent dual form, whose equality system
is much smaller, and reads the lifted matrix off the conic dual; both sides
of the primal-dual pair come out of the single solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .conic import (
    ConicLP,
    ConicSolution,
    conjugation_matrix,
    free_block,
    nonneg_block,
    pack_symmetric,
    packed_dim,
    psd_block,
    solve_conic,
    unpack_symmetric,
)
from .cvxqp import QpInfeasibleError, solve_convex_qp
from .instance import ReducedInstance
from .linalg import psd_project

log = logging.getLogger(__name__)

__all__ = [
    "BoundCertificate",
    "BoundResult",
    "corner_matrix",
    "lifted_objective",
    "assemble_dnn",
    "assemble_dnn_dual",
    "dnn_lower_bound",
]


def corner_matrix(inst: ReducedInstance) -> np.ndarray:
    """B = [[-A, b], [0^T, 1]], shape (M+1, n+1)."""
    B = np.zeros((inst.m + 1, inst.n + 1))
    B[: inst.m, : inst.n] = -inst.A
    B[: inst.m, inst.n] = inst.b
    B[inst.m, inst.n] = 1.0
    return B


def lifted_objective(inst: ReducedInstance) -> np.ndarray:
    """[[Q, d], [d^T, 0]], shape (n+1, n+1)."""
    Qt = np.zeros((inst.n + 1, inst.n + 1))
    Qt[: inst.n, : inst.n] = inst.Q
    Qt[: inst.n, inst.n] = inst.d
    Qt[inst.n, : inst.n] = inst.d
    return Qt


def assemble_dnn(inst: ReducedInstance) -> ConicLP:
    """Primal form of the relaxation.

    Variable blocks: the (n+1)-side PSD matrix Y and a nonneg block holding
    the packed entries of B Y B^T.  Equality rows pin Y_{n+1,n+1} = 1 and
    link the conjugated entries to the nonneg block.
    """
    n, m = inst.n, inst.m
    B = corner_matrix(inst)
    t_y = packed_dim(n + 1)
    t_v = packed_dim(m + 1)
    P = conjugation_matrix(B.T)  # svec(Y) -> svec(B Y B^T)
    A = np.zeros((1 + t_v, t_y + t_v))
    b = np.zeros(1 + t_v)
    A[0, t_y - 1] = 1.0  # last packed entry of Y is Y_{n+1,n+1}
    b[0] = 1.0
    A[1:, :t_y] = P
    A[1:, t_y:] = -np.eye(t_v)
    c = np.concatenate([pack_symmetric(lifted_objective(inst)), np.zeros(t_v)])
    return ConicLP(objective=c, A=A, b=b, blocks=(psd_block(n + 1), nonneg_block(t_v)))


def assemble_dnn_dual(inst: ReducedInstance) -> ConicLP:
    """Dual form: max lambda over S >= 0 (PSD, side n+1), T >= 0 (packed
    symmetric, side M+1) with svec(S) + lambda svec(E) + svec(B^T T B)
    = svec([[Q, d], [d^T, 0]]).  Blocks are ordered (S, lambda, T) so that
    appending a constraint row to the QP only grows the trailing block,
    which keeps warm starts a zero-pad."""
    n, m = inst.n, inst.m
    B = corner_matrix(inst)
    t_s = packed_dim(n + 1)
    t_t = packed_dim(m + 1)
    G = conjugation_matrix(B)  # svec(T) -> svec(B^T T B)
    E = np.zeros((n + 1, n + 1))
    E[n, n] = 1.0
    A = np.zeros((t_s, t_s + 1 + t_t))
    A[:, :t_s] = np.eye(t_s)
    A[:, t_s] = pack_symmetric(E)
    A[:, t_s + 1:] = G
    b = pack_symmetric(lifted_objective(inst))
    c = np.zeros(t_s + 1 + t_t)
    c[t_s] = -1.0  # maximize lambda
    return ConicLP(objective=c, A=A, b=b,
                   blocks=(psd_block(n + 1), free_block(1), nonneg_block(t_t)))


@dataclass(frozen=True)
class BoundCertificate:
    """Dual triple with its correction term.

    By construction [[Q,d],[d^T,-lambda_star]] = Delta + S_star
    + B^T T_star B holds exactly in floating point; S_star is PSD and
    T_star elementwise nonnegative after projection, so
    safe_bound = lambda_star + delta (1 + r0^2) is a valid lower bound up
    to rounding in the residual arithmetic itself.
    """

    lambda_star: float
    S_star: np.ndarray
    T_star: np.ndarray
    Delta: np.ndarray
    delta: float
    safe_bound: float
    status: str
    primal_objective: float


@dataclass(frozen=True)
class BoundResult:
    safe_bound: float
    z: np.ndarray | None
    certificate: BoundCertificate
    solution: ConicSolution


def dnn_lower_bound(inst: ReducedInstance, conic_tol: float = 1e-7,
                    max_iters: int = 200000, warm: ConicSolution | None = None,
                    act_tol: float = 1e-7) -> BoundResult:
    """Safe lower bound plus the relaxation point z projected onto the region.

    Solves the primal-dual relaxation pair once, projects T* entrywise and
    S* onto the PSD cone, forms the residual Delta and returns
    lambda* + delta (1 + r0^2).  Non-convergence yields safe_bound = -inf
    (callers treat it as no bound); the relaxation point is still extracted
    on a best-effort basis.
    """
    n, m = inst.n, inst.m
    prob = assemble_dnn_dual(inst)
    sol = solve_conic(prob, tol=conic_tol, max_iters=max_iters, warm=warm)
    t_s = packed_dim(n + 1)

    S_star = psd_project(unpack_symmetric(sol.x[:t_s], n + 1))
    lambda_star = float(sol.x[t_s])
    T_star = np.maximum(unpack_symmetric(sol.x[t_s + 1:], m + 1), 0.0)
    B = corner_matrix(inst)
    Qt = lifted_objective(inst)
    lifted = Qt.copy()
    lifted[n, n] = -lambda_star
    Delta = lifted - S_star - B.T @ T_star @ B
    Delta = 0.5 * (Delta + Delta.T)
    delta = min(0.0, float(np.linalg.eigvalsh(Delta)[0]))
    if sol.status == "converged" and np.isfinite(lambda_star):
        safe_bound = lambda_star + delta * (1.0 + inst.radius**2)
    else:
        safe_bound = -np.inf
        log.debug("dnn bound did not converge (status=%s); returning -inf sentinel", sol.status)

    # relaxation matrix from the conic dual; its x-part seeds the local search
    Y = unpack_symmetric(sol.y, n + 1)
    denom = Y[n, n]
    z = None
    primal_obj = float(np.tensordot(Qt, Y)) if np.all(np.isfinite(Y)) else np.nan
    if np.isfinite(denom) and abs(denom) > 1e-8 and np.all(np.isfinite(Y)):
        z_raw = Y[:n, n] / denom
        if inst.violation(z_raw) <= act_tol * (1.0 + np.abs(inst.b).max(initial=0.0)):
            z = z_raw
        else:
            try:
                proj = solve_convex_qp(2.0 * np.eye(n), -2.0 * z_raw, inst.A, inst.b)
                z = proj.x
            except QpInfeasibleError:
                z = None

    cert = BoundCertificate(
        lambda_star=lambda_star, S_star=S_star, T_star=T_star, Delta=Delta,
        delta=delta, safe_bound=safe_bound, status=sol.status,
        primal_objective=primal_obj,
    )
    return BoundResult(safe_bound=safe_bound, z=z, certificate=cert, solution=sol)
