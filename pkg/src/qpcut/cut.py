"""Valid-cut generation around a certified second-order KKT point.

Given an anchor xbar with multipliers lambda (Q xbar + d = -A^T lambda,
lambda >= 0) and a reference value nu_R <= Phi(xbar), a direction c is a
valid cut when the minimum of Phi over the slab

    {x : A x <= b,  c^T (x - xbar) <= 1}

is at least nu_R; the half-space c^T (x - xbar) >= 1 can then replace the
slab without losing any solution below nu_R.  Cuts are found by a linear
SDP over (S PSD, T >= 0, c free) tied together by a rank-two multiplier
term anchored at xbar; any feasible triple certifies validity.  In floating
point the certificate only holds up to a residual matrix Delta, so the
bound stored for the removed slab is nu_R + delta (1 + r0^2) with
delta = min(0, lambda_min(Delta)), optionally refined by solving the DNN
bound of the slab directly.

A second, independent generator builds the classical LP-based cut in the
coordinates y = b_{1:n} - A_{1:n} x of a rank-n subsystem whose leading k
rows span the active normals: k linear programs produce mu_i and the cut is
c = -A_{1:n}^T theta with theta_i = 1 / mu_i.  It exists only under extra
conditions (positive mu, nonnegative reduced multipliers q) and is used as
a cross-check, never by the driver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .bound import BoundResult, corner_matrix, dnn_lower_bound
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
from .instance import ReducedInstance
from .linalg import psd_project
from .localsearch import KktPoint

log = logging.getLogger(__name__)

__all__ = [
    "Cut",
    "CutCertificate",
    "ReducedCoords",
    "CutGenerationError",
    "LpCutNotApplicableError",
    "beta_policy",
    "assemble_cut_sdp",
    "dnn_cut",
    "reduced_coords",
    "lp_cut",
]

_KKT_TOL = 1e-6


class CutGenerationError(RuntimeError):
    """Cut SDP failed to produce a usable direction."""


class LpCutNotApplicableError(RuntimeError):
    """The LP cut's existence preconditions do not hold at this anchor."""


@dataclass(frozen=True)
class Cut:
    """A generated cutting plane.

    The appended constraint row is -c^T x <= rhs_new_row with
    rhs_new_row = -c^T anchor - 1 (keep c^T (x - anchor) >= 1);
    removed_bound is a safe lower bound on the objective over the removed
    slab."""

    c: np.ndarray
    anchor: np.ndarray
    rhs_new_row: float
    removed_bound: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        if not np.all(np.isfinite(c)) or np.abs(c).max(initial=0.0) == 0.0:
            raise ValueError("cut direction must be finite and nonzero")
        if not np.isfinite(self.removed_bound):
            raise ValueError("removed-region bound must be finite")

    def row(self) -> tuple[np.ndarray, float]:
        """(row, rhs) of the constraint appended to the region."""
        return -self.c, self.rhs_new_row


@dataclass(frozen=True)
class CutCertificate:
    S: np.ndarray
    T: np.ndarray
    beta: float
    Delta: np.ndarray
    delta: float
    nu_R: float
    refined: bool
    status: str


def beta_policy(phi_xbar: float, nu_R: float, eps: float) -> float:
    """Half the anchor-to-reference gap, floored at eps/200.

    Strict feasibility of the cut SDP needs 0 < beta < Phi(xbar) - nu_R;
    centering maximizes the distance from both degenerate endpoints, and the
    floor covers the stale-upper-bound case Phi(xbar) <= nu_R."""
    return 0.5 * max(phi_xbar - nu_R, eps * 1e-2)


def _multiplier_column(inst: ReducedInstance, xbar: np.ndarray, beta: float) -> np.ndarray:
    g = np.empty(inst.n + 1)
    g[: inst.n] = inst.Q @ xbar + inst.d
    g[inst.n] = beta - xbar @ inst.Q @ xbar - inst.d @ xbar
    return g


def _lifted_reference(inst: ReducedInstance, nu_R: float) -> np.ndarray:
    Qt = np.zeros((inst.n + 1, inst.n + 1))
    Qt[: inst.n, : inst.n] = inst.Q
    Qt[: inst.n, inst.n] = inst.d
    Qt[inst.n, : inst.n] = inst.d
    Qt[inst.n, inst.n] = -nu_R
    return Qt


def assemble_cut_sdp(inst: ReducedInstance, xbar: np.ndarray, zbar: np.ndarray,
                     nu_R: float, beta: float) -> ConicLP:
    """Conic program searching for a valid cut direction.

    Variables (S PSD side n+1, c free length n, T nonneg packed side M+1);
    the packed symmetric identity

        [[Q, d], [d^T, -nu_R]] = S + B^T T B
            + sym( (Q xbar + d; beta - Phi_lin(xbar)) (-c; 1 + c^T xbar)^T )

    supplies the equality rows and the objective is c . (zbar - xbar), which
    biases the cut towards also excluding the relaxation point zbar.  Blocks
    are ordered (S, c, T) so appended QP rows only grow the trailing block.
    """
    n, m = inst.n, inst.m
    xbar = np.asarray(xbar, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    B = corner_matrix(inst)
    t_s = packed_dim(n + 1)
    t_t = packed_dim(m + 1)
    G = conjugation_matrix(B)
    g = _multiplier_column(inst, xbar, beta)

    # affine split of the rank-two term: l(c) = e_{n+1} + J c
    J = np.zeros((n + 1, n))
    J[:n, :] = -np.eye(n)
    J[n, :] = xbar
    e_last = np.zeros(n + 1)
    e_last[n] = 1.0
    base = _lifted_reference(inst, nu_R) - 0.5 * (np.outer(g, e_last) + np.outer(e_last, g))

    K = np.empty((t_s, n))
    for i in range(n):
        u = J[:, i]
        K[:, i] = pack_symmetric(0.5 * (np.outer(g, u) + np.outer(u, g)))

    A = np.zeros((t_s, t_s + n + t_t))
    A[:, :t_s] = np.eye(t_s)
    A[:, t_s:t_s + n] = K
    A[:, t_s + n:] = G
    b = pack_symmetric(base)
    cost = np.zeros(t_s + n + t_t)
    cost[t_s:t_s + n] = zbar - xbar
    return ConicLP(objective=cost, A=A, b=b,
                   blocks=(psd_block(n + 1), free_block(n), nonneg_block(t_t)))


def cut_residual(inst: ReducedInstance, xbar: np.ndarray, nu_R: float, beta: float,
                 S: np.ndarray, T: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Delta of the cut identity for the given (S, T, c), exact in floats."""
    B = corner_matrix(inst)
    g = _multiplier_column(inst, xbar, beta)
    ell = np.concatenate([-c, [1.0 + c @ xbar]])
    Delta = (_lifted_reference(inst, nu_R) - S - B.T @ T @ B
             - 0.5 * (np.outer(g, ell) + np.outer(ell, g)))
    return 0.5 * (Delta + Delta.T)


def dnn_cut(inst: ReducedInstance, xbar: np.ndarray, zbar: np.ndarray,
            nu_R: float, nu: float, *, eps: float = 1e-4, beta: float | None = None,
            conic_tol: float = 1e-7, max_iters: int = 200000,
            warm: ConicSolution | None = None,
            warm_bound: ConicSolution | None = None) -> tuple[Cut, CutCertificate]:
    """Generate a cut and its safeguarded removed-region bound.

    Solves the cut SDP, projects the returned (S, T) onto their cones,
    forms the identity residual Delta and the bound
    w = nu_R + delta (1 + r0^2).  When w < nu, the bound is refined by a
    direct DNN bound of the removed slab and the larger of the two valid
    candidates is kept.  Raises :class:`CutGenerationError` when the conic
    solve fails or the direction degenerates; the driver owns the retry
    policy.
    """
    xbar = np.asarray(xbar, dtype=float)
    zbar = np.asarray(zbar, dtype=float)
    phi_xbar = inst.objective(xbar)
    if beta is None:
        beta = beta_policy(phi_xbar, nu_R, eps)
    if beta < 0:
        raise ValueError("beta must be nonnegative")

    prob = assemble_cut_sdp(inst, xbar, zbar, nu_R, beta)
    sol = solve_conic(prob, tol=conic_tol, max_iters=max_iters, warm=warm)
    n, m = inst.n, inst.m
    t_s = packed_dim(n + 1)
    c = sol.x[t_s:t_s + n].copy()
    if sol.status != "converged":
        raise CutGenerationError(f"cut SDP did not converge (status={sol.status})")
    if not np.all(np.isfinite(c)) or np.abs(c).max(initial=0.0) <= 1e-12:
        raise CutGenerationError("cut SDP returned a degenerate direction")

    S = psd_project(unpack_symmetric(sol.x[:t_s], n + 1))
    T = np.maximum(unpack_symmetric(sol.x[t_s + n:], m + 1), 0.0)
    Delta = cut_residual(inst, xbar, nu_R, beta, S, T, c)
    delta = min(0.0, float(np.linalg.eigvalsh(Delta)[0]))
    w = nu_R + delta * (1.0 + inst.radius**2)

    refined = False
    if w < nu:
        slab = inst.with_rows(c[None, :], np.array([c @ xbar + 1.0]), ("removed-slab",))
        refine: BoundResult = dnn_lower_bound(slab, conic_tol=conic_tol,
                                              max_iters=max_iters, warm=warm_bound)
        w = max(w, refine.safe_bound)
        refined = True

    cut = Cut(c=c, anchor=xbar, rhs_new_row=float(-c @ xbar - 1.0), removed_bound=float(w))
    cert = CutCertificate(S=S, T=T, beta=float(beta), Delta=Delta, delta=delta,
                          nu_R=float(nu_R), refined=refined, status=sol.status)
    return cut, cert


# ---------------------------------------------------------------------------
# LP-based cross-check cut (change of coordinates)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReducedCoords:
    """Data of the change of coordinates y = b_{1:n} - A_{1:n} x.

    basis_rows lists the selected rows (first k span the active normals);
    (R, p, r) carry the objective in y-coordinates, (F, w) the remaining
    rows, (D, q, upsilon) the Schur-reduced quantities with q matching the
    KKT multipliers of the basis rows and upsilon = Phi(xbar), and H the
    complementary PSD part with [[R, p], [p^T, r]] = [[D, q], [q^T, ups]] + H.
    """

    k: int
    basis_rows: tuple[int, ...]
    R: np.ndarray
    p: np.ndarray
    r: float
    F: np.ndarray
    w: np.ndarray
    y_bar: np.ndarray
    D: np.ndarray
    q: np.ndarray
    upsilon: float
    H: np.ndarray


def _greedy_basis(inst: ReducedInstance, kkt: KktPoint) -> tuple[list[int], int]:
    """Rank-n row selection: active rows first (positive-multiplier rows
    leading), then the rest, accepting each row that grows the rank."""
    m, n = inst.m, inst.n
    active = list(kkt.active)
    pos = [i for i in active if kkt.multipliers[i] > 1e-12]
    zero = [i for i in active if i not in pos]
    rest = [i for i in range(m) if i not in active]
    chosen: list[int] = []
    k = 0
    rank = 0
    for phase, rows in enumerate((pos + zero, rest)):
        for i in rows:
            if rank == n:
                break
            cand = inst.A[chosen + [i]]
            new_rank = np.linalg.matrix_rank(cand, tol=1e-10 * max(1.0, np.abs(cand).max()))
            if new_rank > rank:
                chosen.append(i)
                rank = new_rank
        if phase == 0:
            k = len(chosen)
    if rank < n:
        raise LpCutNotApplicableError("no rank-n subsystem extending the active normals")
    return chosen, k


def reduced_coords(inst: ReducedInstance, kkt: KktPoint,
                   delta_pd: float = 1e-8) -> ReducedCoords:
    """Build the coordinate change around a certified KKT point.

    Raises :class:`LpCutNotApplicableError` when no rank-n basis exists,
    when the trailing block R22 is not positive definite within delta_pd,
    or when the reduced multipliers q fail their sign/consistency checks.
    """
    if not kkt.second_order:
        raise LpCutNotApplicableError("anchor is not a certified second-order KKT point")
    rows, k = _greedy_basis(inst, kkt)
    n = inst.n
    A1 = inst.A[rows]
    b1 = inst.b[rows]
    rest = [i for i in range(inst.m) if i not in rows]
    A1_inv = np.linalg.inv(A1)
    xc = A1_inv @ b1
    R = A1_inv.T @ inst.Q @ A1_inv
    R = 0.5 * (R + R.T)
    p = -A1_inv.T @ (inst.d + inst.Q @ xc)
    r = float((inst.Q @ xc + 2.0 * inst.d) @ xc)
    F = -inst.A[rest] @ A1_inv if rest else np.zeros((0, n))
    w = inst.b[rest] - inst.A[rest] @ xc if rest else np.zeros(0)
    y_bar = b1 - A1 @ kkt.x

    if k < n:
        R11 = R[:k, :k]
        R12 = R[:k, k:]
        R22 = R[k:, k:]
        lam22 = float(np.linalg.eigvalsh(R22)[0])
        if lam22 <= delta_pd:
            raise LpCutNotApplicableError(
                f"trailing block is not positive definite (lambda_min={lam22:.3e})")
        p1, p2 = p[:k], p[k:]
        R22_inv_R12T = np.linalg.solve(R22, R12.T)
        R22_inv_p2 = np.linalg.solve(R22, p2)
        D = np.zeros((n, n))
        D[:k, :k] = R11 - R12 @ R22_inv_R12T
        q = np.zeros(n)
        q[:k] = p1 - R12 @ R22_inv_p2
        upsilon = r - float(p2 @ R22_inv_p2)
        stack = np.vstack([R12, R22, p2[None, :]])
        H = stack @ np.linalg.solve(R22, stack.T)
    else:
        D = R.copy()
        q = p.copy()
        upsilon = r
        H = np.zeros((n + 1, n + 1))
    D = 0.5 * (D + D.T)
    H = 0.5 * (H + H.T)

    dscale = 1.0 + np.abs(inst.d).max(initial=0.0)
    phi = inst.objective(kkt.x)
    if q.min(initial=0.0) < -1e-8 * dscale:
        raise LpCutNotApplicableError(f"reduced multipliers have a negative entry ({q.min():.3e})")
    if abs(upsilon - phi) > 1e-6 * (1.0 + abs(phi)):
        raise LpCutNotApplicableError(
            f"upsilon = {upsilon:.8g} does not reproduce the anchor objective {phi:.8g}")
    stat = inst.Q @ kkt.x + inst.d + A1[:k].T @ q[:k] if k else inst.Q @ kkt.x + inst.d
    if np.abs(stat).max(initial=0.0) > _KKT_TOL * dscale:
        raise LpCutNotApplicableError(
            "reduced multipliers do not reproduce the KKT stationarity system")

    return ReducedCoords(k=k, basis_rows=tuple(rows), R=R, p=p, r=r, F=F, w=w,
                         y_bar=y_bar, D=D, q=np.maximum(q, 0.0), upsilon=upsilon, H=H)


def lp_cut(inst: ReducedInstance, kkt: KktPoint, nu_R: float, beta: float, *,
           conic_tol: float = 1e-7, max_iters: int = 200000) -> Cut:
    """LP-based cut at a certified anchor; cross-check generator.

    Solves one homogenized LP per leading basis row: infeasibility means the
    whole direction is certified (theta_i = 0), a positive optimum mu_i
    contributes theta_i = 1/mu_i, and a zero optimum violates the existence
    preconditions (not applicable).  The removed-slab bound has no residual
    certificate on this path, so it is always computed by a direct DNN
    bound of the slab.
    """
    phi = inst.objective(kkt.x)
    if phi - nu_R < -1e-9 * (1.0 + abs(phi)):
        raise LpCutNotApplicableError("reference value exceeds the anchor objective")
    if beta < 0 or beta > max(phi - nu_R, 0.0) + 1e-12 * (1.0 + abs(phi)):
        raise LpCutNotApplicableError("beta outside [0, Phi(xbar) - nu_R]")

    rc = reduced_coords(inst, kkt)
    n = inst.n
    k = rc.k
    theta = np.zeros(n)
    n_rest = rc.F.shape[0]
    A_ub = np.hstack([rc.F, -rc.w[:, None]]) if n_rest else None
    b_ub = np.zeros(n_rest) if n_rest else None
    cost = np.concatenate([rc.q, [beta]])
    for i in range(k):
        A_eq = np.concatenate([rc.D[:, i], [rc.q[i]]])[None, :]
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[-1.0],
                      bounds=(0.0, None), method="highs")
        if res.status == 2:
            continue  # infeasible: mu_i = +inf, theta_i = 0
        if res.status != 0:
            raise LpCutNotApplicableError(f"mu LP for row {i} failed: {res.message}")
        mu = float(res.fun)
        if mu <= 1e-10:
            raise LpCutNotApplicableError(
                f"mu_{i} = {mu:.3e} is numerically zero; existence preconditions fail")
        theta[i] = 1.0 / mu
    if np.abs(theta).max(initial=0.0) == 0.0:
        raise LpCutNotApplicableError(
            "all mu LPs are infeasible; the certified region is the whole polytope")

    A1 = inst.A[list(rc.basis_rows)]
    c = -A1.T @ theta
    slab = inst.with_rows(c[None, :], np.array([c @ kkt.x + 1.0]), ("removed-slab",))
    refine = dnn_lower_bound(slab, conic_tol=conic_tol, max_iters=max_iters)
    if not np.isfinite(refine.safe_bound):
        raise LpCutNotApplicableError("removed-slab bound did not converge")
    return Cut(c=c, anchor=kkt.x, rhs_new_row=float(-c @ kkt.x - 1.0),
               removed_bound=float(refine.safe_bound))
