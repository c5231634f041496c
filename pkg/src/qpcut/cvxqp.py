"""Convex QP subsolver: primal active-set method with equality pins.

Solves

    min  0.5 x^T H x + g^T x
    s.t. a_i^T x  = b_i   (i pinned)
         a_i^T x <= b_i   (otherwise)

for H positive semidefinite (within tolerance) over a nonempty bounded
region.  Pinned rows are eliminated through a null-space basis; the
remaining inequality problem runs a primal active-set loop whose equality
subproblems are solved by eigendecomposition of the reduced Hessian, so
degenerate faces and zero-curvature directions (H singular, LP-like
subproblems) take minimum-norm Newton steps or ray steps to the nearest
blocking row.  Warm-startable from a feasible point; falls back to a
phase-1 LP otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .linalg import nullspace_basis

log = logging.getLogger(__name__)

__all__ = ["CvxQpResult", "QpInfeasibleError", "QpUnboundedError", "solve_convex_qp"]


class QpInfeasibleError(ValueError):
    """Pinned rows inconsistent or no point satisfies the inequalities."""


class QpUnboundedError(RuntimeError):
    """Descent ray with no blocking row; violates the bounded-region contract."""


@dataclass(frozen=True)
class CvxQpResult:
    """Solution with one multiplier per constraint row (original order).

    Multipliers are nonnegative for inequality rows and free for pinned
    rows; kkt_residual is the max of stationarity, feasibility and
    complementarity errors.
    """

    x: np.ndarray
    multipliers: np.ndarray
    objective: float
    kkt_residual: float


def _phase1(C: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Feasible point of {x : Cx <= e} via one LP; raises if empty."""
    m, n = C.shape
    if m == 0:
        return np.zeros(n)
    cost = np.zeros(n + 1)
    cost[n] = 1.0
    A_ub = np.hstack([C, -np.ones((m, 1))])
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=e, bounds=bounds, method="highs")
    if res.status != 0 or res.x is None:
        raise QpInfeasibleError(f"phase-1 LP failed: {res.message}")
    if res.x[n] > 1e-7 * (1.0 + np.abs(e).max(initial=0.0)):
        raise QpInfeasibleError("inequality system is infeasible")
    return res.x[:n]


def _active_set(H: np.ndarray, g: np.ndarray, C: np.ndarray, e: np.ndarray,
                x0: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray]:
    """Inequality-only active-set loop; returns (x, multipliers)."""
    m, n = C.shape
    x = x0.copy()
    W: list[int] = []
    gscale = 1.0 + np.abs(g).max(initial=0.0)
    curv_eps = 1e-11
    bland = False
    for it in range(max_iter):
        if it > m + 3 * n + 30:
            bland = True
        grad = H @ x + g
        if W:
            Z = nullspace_basis(C[W], tol=1e-12)
        else:
            Z = np.eye(n)
        mode = "newton"
        if Z.shape[1] == 0:
            p = np.zeros(n)
        else:
            Hz = Z.T @ H @ Z
            Hz = 0.5 * (Hz + Hz.T)
            gz = Z.T @ grad
            w, V = np.linalg.eigh(Hz)
            scale = max(1.0, w.max(initial=0.0))
            flat = w <= curv_eps * scale
            g_flat = V[:, flat].T @ gz
            if np.linalg.norm(g_flat) > 1e-10 * (1.0 + np.linalg.norm(gz)):
                q = -V[:, flat] @ g_flat
                q /= np.linalg.norm(q)
                mode = "ray"
            else:
                rng_ = ~flat
                q = -V[:, rng_] @ ((V[:, rng_].T @ gz) / w[rng_]) if np.any(rng_) else np.zeros(Z.shape[1])
            p = Z @ q

        if mode == "newton" and np.abs(p).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(x).max(initial=0.0)):
            mu = np.zeros(m)
            if W:
                mu_W, *_ = np.linalg.lstsq(C[W].T, -grad, rcond=None)
                mu[W] = mu_W
            neg_tol = 1e-9 * (1.0 + np.abs(grad).max(initial=0.0))
            negative = [i for i in W if mu[i] < -neg_tol]
            if not negative:
                return x, mu
            drop = negative[0] if bland else min(negative, key=lambda i: mu[i])
            W.remove(drop)
            continue

        Cp = C @ p
        resid = e - C @ x
        alpha_block = np.inf
        blocker = -1
        cand = [i for i in range(m) if i not in W and Cp[i] > 1e-12 * (1.0 + np.abs(C[i]).max())]
        if cand:
            ratios = np.maximum(resid[cand] / Cp[cand], 0.0)
            amin = ratios.min()
            near = [cand[k] for k in range(len(cand)) if ratios[k] <= amin + 1e-12 * (1.0 + amin)]
            blocker = min(near)
            alpha_block = float(amin)
        if mode == "ray":
            if blocker < 0:
                raise QpUnboundedError("unbounded descent direction; feasible region is not bounded")
            x = x + alpha_block * p
            W.append(blocker)
        else:
            alpha = min(1.0, alpha_block)
            x = x + alpha * p
            if alpha < 1.0:
                W.append(blocker)
        W.sort()
    raise RuntimeError(f"active-set iteration cap ({max_iter}) exceeded; gscale={gscale:.2e}")


def solve_convex_qp(H: np.ndarray, g: np.ndarray, A: np.ndarray, b: np.ndarray,
                    pinned=(), tol: float = 1e-9, x0: np.ndarray | None = None,
                    max_iter: int | None = None) -> CvxQpResult:
    """Minimize 0.5 x^T H x + g^T x subject to the rows of (A, b).

    Rows listed in ``pinned`` are equalities, the rest inequalities.  H must
    be PSD up to a small spectral slack (the caller guarantees this; tiny
    negative eigenvalues are clamped).  ``x0`` optionally warm-starts the
    active-set loop; infeasible or missing starts go through a phase-1 LP.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = g.shape[0]
    H = 0.5 * (H + H.T)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    m = A.shape[0]
    pinned = sorted(set(int(i) for i in pinned))
    if pinned and (pinned[0] < 0 or pinned[-1] >= m):
        raise IndexError("pinned row index out of range")
    if max_iter is None:
        max_iter = 50 * (m + n + 10)

    w = np.linalg.eigvalsh(H)
    hscale = 1.0 + abs(w).max(initial=0.0)
    if w[0] < -1e-7 * hscale:
        raise ValueError(f"H is not positive semidefinite (lambda_min={w[0]:.3e})")
    if w[0] < 0.0:
        wc, V = np.linalg.eigh(H)
        Hs = (V * np.maximum(wc, 0.0)) @ V.T
        Hs = 0.5 * (Hs + Hs.T)
    else:
        Hs = H

    free = [i for i in range(m) if i not in pinned]
    A_pin, b_pin = A[pinned], b[pinned]
    C, e = A[free], b[free]

    if pinned:
        x_p, *_ = np.linalg.lstsq(A_pin, b_pin, rcond=None)
        if np.abs(A_pin @ x_p - b_pin).max(initial=0.0) > 1e-8 * (1.0 + np.abs(b_pin).max(initial=0.0)):
            raise QpInfeasibleError("pinned rows are inconsistent")
        Z = nullspace_basis(A_pin, tol=1e-12)
    else:
        x_p = np.zeros(n)
        Z = np.eye(n)

    if Z.shape[1] == 0:
        x = x_p
        viol = np.max(C @ x - e, initial=0.0)
        if viol > 1e-8 * (1.0 + np.abs(e).max(initial=0.0)):
            raise QpInfeasibleError("pinned rows fix an infeasible point")
        mu_free = np.zeros(len(free))
    else:
        Hr = Z.T @ Hs @ Z
        gr = Z.T @ (Hs @ x_p + g)
        Cr = C @ Z
        er = e - C @ x_p
        if x0 is not None:
            v0 = Z.T @ (np.asarray(x0, dtype=float) - x_p)
            if np.max(Cr @ v0 - er, initial=0.0) > 1e-9 * (1.0 + np.abs(er).max(initial=0.0)):
                v0 = _phase1(Cr, er)
        else:
            v0 = _phase1(Cr, er)
        v, mu_free = _active_set(Hr, gr, Cr, er, v0, tol, max_iter)
        x = x_p + Z @ v

    mu = np.zeros(m)
    mu[free] = mu_free
    if pinned:
        rhs = -(Hs @ x + g + A[free].T @ mu_free)
        mu_pin, *_ = np.linalg.lstsq(A_pin.T, rhs, rcond=None)
        mu[pinned] = mu_pin
    # zero out solver noise on inequality multipliers
    ineq = np.array(free, dtype=int)
    if ineq.size:
        noise = (mu[ineq] < 0.0) & (mu[ineq] >= -1e-9)
        mu[ineq[noise]] = 0.0

    grad_full = H @ x + g + A.T @ mu
    stat = np.abs(grad_full).max(initial=0.0) if n else 0.0
    feas_in = np.max(C @ x - e, initial=0.0) if len(free) else 0.0
    feas_eq = np.abs(A_pin @ x - b_pin).max(initial=0.0) if pinned else 0.0
    comp = np.abs(mu[ineq] * (C @ x - e)).max(initial=0.0) if ineq.size else 0.0
    kkt = float(max(stat, feas_in, feas_eq, comp))
    obj = float(0.5 * x @ H @ x + g @ x)
    if kkt > tol * (1.0 + np.abs(g).max(initial=0.0)):
        log.debug("convex QP kkt residual %.3e above tol %.1e", kkt, tol)
    return CvxQpResult(x=x, multipliers=mu, objective=obj, kkt_residual=kkt)
