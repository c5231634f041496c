"""Local search producing second-order KKT points of the reduced QP.

The objective Phi(x) = x^T Q x + 2 d^T x is split as Q = M - N with both
parts PSD; minimizing the bi-convex surrogate

    Psi(x, xt) = 0.5 x^T M x + 0.5 xt^T M xt + d^T x + d^T xt - x^T N xt

over x is a convex QP whose fixed points are exactly the KKT points of the
original problem.  The outer loop alternates three moves until the relaxed
comparison Phi(xbar) >= Phi(xt) - delta holds:

  * restricted minimization of Phi with the current active rows pinned
    (convex on that face whenever the conditional-PD check passes),
  * one surrogate minimization step from the restricted minimizer,
  * a facet-descent escape along a nonconvex direction of the reduced
    Hessian when the conditional-PD check fails (strictly grows the active
    set, which makes the loop finite).

All comparisons are tolerance-based; the output carries multipliers,
residuals and a certification flag that is re-verified independently of the
solve path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.optimize

from .cvxqp import solve_convex_qp
from .instance import ReducedInstance, UnboundedRegionError
from .linalg import nullspace_basis, psd_project, reduced_hessian, sym_eig

log = logging.getLogger(__name__)

__all__ = [
    "Tolerances",
    "KktPoint",
    "DcSplit",
    "NotConditionallyConvexError",
    "active_set",
    "dc_split",
    "gmc_step",
    "restricted_qp_min",
    "facet_descent",
    "finite_gmc",
]

_KKT_RES_FACTOR = 1e-6
_MULT_FLOOR = -1e-9


class NotConditionallyConvexError(RuntimeError):
    """Reduced Hessian on the pinned face is not PSD within tolerance."""


@dataclass(frozen=True)
class Tolerances:
    """Numerical slacks of the local search.

    act: active-set slack, relative to 1+|b_i|.
    pd: conditional-PD eigenvalue floor (pass iff reduced lambda_min > -pd).
    obj: objective-comparison slack, relative to 1+|Phi|.
    max_outer: outer iteration cap; None resolves to 100*(M+1).
    """

    act: float = 1e-7
    pd: float = 1e-8
    obj: float = 1e-9
    max_outer: int | None = None

    def __post_init__(self):
        if self.act <= 0 or self.pd <= 0 or self.obj <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_outer is not None and self.max_outer <= 0:
            raise ValueError("max_outer must be positive")


@dataclass(frozen=True)
class DcSplit:
    """Q = M - N with M, N PSD (spectral split)."""

    M: np.ndarray
    N: np.ndarray


@dataclass(frozen=True)
class KktPoint:
    """Local-search output.

    multipliers follow the halved-gradient convention
    Q x + d = -A^T multipliers; they vanish off the active set.
    ``second_order`` records reduced_lambda_min > -pd; ``certified``
    additionally requires the KKT residual bound and multiplier signs, all
    re-checked independently of the solve path.  ``phi_trace`` is the outer
    objective trajectory.
    """

    x: np.ndarray
    active: tuple[int, ...]
    multipliers: np.ndarray
    kkt_residual: float
    reduced_lambda_min: float
    second_order: bool
    objective: float
    certified: bool
    iterations: int
    phi_trace: tuple[float, ...]


def active_set(x: np.ndarray, A: np.ndarray, b: np.ndarray, delta_act: float = 1e-7) -> tuple[int, ...]:
    """Indices i with |a_i^T x - b_i| <= delta_act * (1 + |b_i|)."""
    x = np.asarray(x, dtype=float)
    resid = np.abs(A @ x - b)
    return tuple(int(i) for i in np.nonzero(resid <= delta_act * (1.0 + np.abs(b)))[0])


def dc_split(Q: np.ndarray) -> DcSplit:
    """Spectral difference-of-convex split of a symmetric matrix."""
    eig = sym_eig(Q)
    pos = np.maximum(eig.values, 0.0)
    neg = np.maximum(-eig.values, 0.0)
    M = (eig.vectors * pos) @ eig.vectors.T
    N = (eig.vectors * neg) @ eig.vectors.T
    return DcSplit(M=0.5 * (M + M.T), N=0.5 * (N + N.T))


def gmc_step(inst: ReducedInstance, split: DcSplit, x_tilde: np.ndarray) -> np.ndarray:
    """One surrogate minimization: argmin_x Psi(x, x_tilde) over the region."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    H = 2.0 * split.M
    g = 2.0 * inst.d - 2.0 * (split.N @ x_tilde)
    res = solve_convex_qp(H, g, inst.A, inst.b, x0=x_tilde)
    return res.x


def _nnls_multipliers(AT: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Nonnegative least-squares fit A^T lam ~= rhs; returns (lam, residual)."""
    if AT.shape[1] == 0:
        return np.zeros(0), float(np.linalg.norm(rhs))
    lam, res = scipy.optimize.nnls(AT, rhs)
    return lam, float(res)


def restricted_qp_min(inst: ReducedInstance, x_hat: np.ndarray, I,
                      tols: Tolerances = Tolerances()) -> tuple[np.ndarray, np.ndarray]:
    """Minimize Phi over the region with the rows of I pinned to equality.

    Requires the conditional-PD check for I (raises
    :class:`NotConditionallyConvexError` otherwise, signalling that the pd
    tolerance was too loose).  Returns (x_tilde, multipliers) in the
    halved-gradient convention; pinned rows whose fitted multiplier is
    negative beyond the floor trigger one re-solve with those rows
    un-pinned.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    I = sorted(set(int(i) for i in I))
    x, lam, ok = _restricted_solve(inst, x_hat, I, tols)
    if not ok and I:
        bad = [i for i in I if lam[i] < _MULT_FLOOR * 10 * (1.0 + np.abs(inst.d).max(initial=0.0))]
        if bad:
            keep = [i for i in I if i not in bad]
            log.debug("re-solving restricted QP with %d rows un-pinned", len(bad))
            x, lam, _ = _restricted_solve(inst, x_hat, keep, tols)
    return x, lam


def _restricted_solve(inst: ReducedInstance, x_hat: np.ndarray, I: list[int],
                      tols: Tolerances) -> tuple[np.ndarray, np.ndarray, bool]:
    n, m = inst.n, inst.m
    rest = [i for i in range(m) if i not in I]
    A_I = inst.A[I] if I else np.zeros((0, n))
    b_I = inst.b[I] if I else np.zeros(0)
    if I:
        x_p, *_ = np.linalg.lstsq(A_I, b_I, rcond=None)
        Z = nullspace_basis(A_I)
    else:
        x_p = np.zeros(n)
        Z = np.eye(n)

    lam = np.zeros(m)
    if Z.shape[1] == 0:
        x = x_p
    else:
        Hr = 2.0 * (Z.T @ inst.Q @ Z)
        Hr = 0.5 * (Hr + Hr.T)
        lam_min = float(np.linalg.eigvalsh(Hr)[0]) if Hr.size else np.inf
        if lam_min < -4.0 * tols.pd:
            raise NotConditionallyConvexError(
                f"reduced Hessian has lambda_min={lam_min:.3e} on the pinned face")
        if lam_min < 0.0:
            Hr = psd_project(Hr)
        gr = 2.0 * (Z.T @ (inst.Q @ x_p + inst.d))
        Cr = inst.A[rest] @ Z if rest else np.zeros((0, Z.shape[1]))
        er = inst.b[rest] - inst.A[rest] @ x_p if rest else np.zeros(0)
        v0 = Z.T @ (x_hat - x_p)
        res = solve_convex_qp(Hr, gr, Cr, er, x0=v0)
        x = x_p + Z @ res.x
        lam[rest] = np.maximum(res.multipliers / 2.0, 0.0)

    grad = inst.Q @ x + inst.d
    rhs = -(grad + inst.A[rest].T @ lam[rest]) if rest else -grad
    ok = True
    if I:
        lam_free, *_ = np.linalg.lstsq(A_I.T, rhs, rcond=None)
        floor = _MULT_FLOOR * 10 * (1.0 + np.abs(inst.d).max(initial=0.0))
        if np.any(lam_free < floor):
            lam_nn, nn_res = _nnls_multipliers(A_I.T, rhs)
            if nn_res <= _KKT_RES_FACTOR * (1.0 + np.abs(inst.d).max(initial=0.0)):
                lam[I] = lam_nn
            else:
                lam[I] = lam_free
                ok = False
        else:
            lam[I] = np.maximum(lam_free, 0.0)
    return x, lam, ok


def facet_descent(inst: ReducedInstance, x_hat: np.ndarray,
                  tols: Tolerances = Tolerances()) -> np.ndarray:
    """Escape step when the conditional-PD check fails at x_hat.

    Walks along the most negative reduced-Hessian direction (sign-fixed to
    be non-ascending) until the first blocking row, which strictly grows the
    active set.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    I = active_set(x_hat, inst.A, inst.b, tols.act)
    Z = nullspace_basis(inst.A[list(I)] if I else np.zeros((0, inst.n)))
    if Z.shape[1] == 0:
        raise ValueError("facet descent called at a vertex (zero-dimensional face)")
    R, _ = reduced_hessian(inst.Q, Z)
    w, V = np.linalg.eigh(R)
    h = Z @ V[:, 0]
    if (inst.Q @ x_hat + inst.d) @ h > 0.0:
        h = -h
    alpha = np.inf
    blocker = -1
    Ah = inst.A @ h
    in_I = np.zeros(inst.m, dtype=bool)
    in_I[list(I)] = True
    for i in range(inst.m):
        if in_I[i] or Ah[i] <= 1e-12 * (1.0 + np.abs(inst.A[i]).max()):
            continue
        step = max((inst.b[i] - inst.A[i] @ x_hat) / Ah[i], 0.0)
        if step < alpha - 1e-12 * (1.0 + alpha if np.isfinite(alpha) else 0.0):
            alpha = step
            blocker = i
    if blocker < 0:
        raise UnboundedRegionError(
            "no blocking row along a null-space direction; instance data is corrupted")
    return x_hat + alpha * h


def _certify(inst: ReducedInstance, x: np.ndarray, lam: np.ndarray, tols: Tolerances,
             iterations: int, trace: list[float]) -> KktPoint:
    """Build the output KKT point, re-verifying every claim from scratch."""
    I = active_set(x, inst.A, inst.b, tols.act)
    lam = lam.copy()
    off = np.ones(inst.m, dtype=bool)
    off[list(I)] = False
    lam[off & (np.abs(lam) <= 1e-7 * (1.0 + np.abs(lam).max(initial=0.0)))] = 0.0
    lam[(lam < 0.0) & (lam >= _MULT_FLOOR)] = 0.0
    Z = nullspace_basis(inst.A[list(I)] if I else np.zeros((0, inst.n)))
    _, red_min = reduced_hessian(inst.Q, Z)
    kkt_res = float(np.abs(inst.Q @ x + inst.d + inst.A.T @ lam).max(initial=0.0))
    dscale = 1.0 + np.abs(inst.d).max(initial=0.0)
    second_order = bool(red_min > -tols.pd)
    certified = bool(
        second_order
        and kkt_res <= _KKT_RES_FACTOR * dscale
        and lam.min(initial=0.0) >= _MULT_FLOOR
        and np.all(lam[off] == 0.0)
        and inst.violation(x) <= tols.act * (1.0 + np.abs(inst.b).max(initial=0.0))
    )
    return KktPoint(
        x=x, active=tuple(I), multipliers=lam, kkt_residual=kkt_res,
        reduced_lambda_min=float(red_min), second_order=second_order,
        objective=inst.objective(x), certified=certified,
        iterations=iterations, phi_trace=tuple(trace),
    )


def finite_gmc(inst: ReducedInstance, x0: np.ndarray,
               tols: Tolerances = Tolerances()) -> KktPoint:
    """Run the finite-terminating local search from a feasible start.

    Returns a certified second-order KKT point in the regular case; if the
    outer cap is hit, the best iterate comes back with ``certified=False``
    and the caller decides (the driver restarts once, then proceeds and
    relies on the cut safeguards).
    """
    x = np.asarray(x0, dtype=float).copy()
    max_outer = tols.max_outer if tols.max_outer is not None else 100 * (inst.m + 1)
    split = dc_split(inst.Q)
    trace = [inst.objective(x)]
    lam_last = np.zeros(inst.m)
    for k in range(1, max_outer + 1):
        I = active_set(x, inst.A, inst.b, tols.act)
        Z = nullspace_basis(inst.A[list(I)] if I else np.zeros((0, inst.n)))
        _, red_min = reduced_hessian(inst.Q, Z)
        if red_min > -tols.pd:
            try:
                x_t, lam = restricted_qp_min(inst, x, I, tols)
            except NotConditionallyConvexError:
                x = facet_descent(inst, x, tols)
                trace.append(inst.objective(x))
                continue
            x_b = gmc_step(inst, split, x_t)
            phi_t = inst.objective(x_t)
            phi_b = inst.objective(x_b)
            if phi_b >= phi_t - tols.obj * (1.0 + abs(phi_t)):
                trace.append(phi_t)
                return _certify(inst, x_t, lam, tols, iterations=k, trace=trace)
            lam_last = lam
            x = x_b
        else:
            x = facet_descent(inst, x, tols)
        trace.append(inst.objective(x))
    log.debug("finite_gmc hit the outer iteration cap (%d)", max_outer)
    point = _certify(inst, x, lam_last, tols, iterations=max_outer, trace=trace)
    return replace(point, certified=False)
