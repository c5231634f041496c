"""Main cutting-plane loop.

Maintains the augmented region (original rows plus one row per cut), the
best upper bound from local search, the region bound from the DNN
relaxation and the min-accumulated bound over all removed slabs.  Each
round: pick reference values just below the incumbent, generate a cut
anchored at the latest certified KKT point, append it, re-bound and
re-search.  Terminates when the region bound closes the relative gap, or on
the time/cut limits, or when cut generation fails twice.

The reported lower bound is always min(region bound, removed-slab bound);
both sides are safe under approximate conic solves, so every intermediate
(upper, lower) pair brackets the global optimum up to the safeguard slack.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .bound import dnn_lower_bound
from .conic import ConicSolution
from .cut import Cut, CutGenerationError, beta_policy, dnn_cut
from .cvxqp import QpInfeasibleError, solve_convex_qp
from .instance import ReducedInstance
from .localsearch import KktPoint, Tolerances, finite_gmc

log = logging.getLogger(__name__)

__all__ = ["TraceRecord", "SolverState", "SolverReport", "relative_gap", "solve"]

_JITTER_SEED = 0x51AB


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    v_upper: float
    v_lower_region: float
    v_lower_cut: float
    gap: float
    cut_time: float
    bound_time: float
    search_time: float


@dataclass
class SolverState:
    """Mutable loop state; region grows one row per accepted cut."""

    region: ReducedInstance
    v_upper: float = np.inf
    best_x: np.ndarray | None = None
    v_lower_region: float = -np.inf
    v_lower_cut: float = np.inf
    cuts: list[Cut] = field(default_factory=list)
    iteration: int = 0
    elapsed: float = 0.0

    @property
    def v_lower(self) -> float:
        return min(self.v_lower_region, self.v_lower_cut)


@dataclass(frozen=True)
class SolverReport:
    upper_bound: float
    lower_bound: float
    initial_gap: float
    final_gap: float
    num_cuts: int
    status: str
    trace: tuple[TraceRecord, ...]
    best_x: np.ndarray | None
    cuts: tuple[Cut, ...]
    wall_time: float


def relative_gap(v_upper: float, v_lower: float, eps: float) -> float:
    """(v_upper - v_lower) / max(|v_upper|, eps), clamped at 0.

    A negative gap means the safeguard slack pushed the lower bound above
    the incumbent; it is clamped with a warning."""
    if np.isinf(v_lower) and v_lower < 0:
        return np.inf
    if not np.isfinite(v_upper):
        return np.inf
    diff = v_upper - v_lower
    if diff < 0:
        log.warning("negative gap clamped to 0 (upper=%.12g lower=%.12g)", v_upper, v_lower)
        return 0.0
    return diff / max(abs(v_upper), eps)


def _feasible_point(region: ReducedInstance) -> np.ndarray | None:
    """Deepest point of the region (Chebyshev-style LP); None when empty."""
    n = region.n
    norms = np.linalg.norm(region.A, axis=1)
    cost = np.zeros(n + 1)
    cost[n] = -1.0
    A_ub = np.hstack([region.A, norms[:, None]])
    bounds = [(None, None)] * n + [(0.0, None)]
    res = linprog(cost, A_ub=A_ub, b_ub=region.b, bounds=bounds, method="highs")
    if res.status != 0 or res.x is None:
        return None
    x = res.x[:n]
    if region.violation(x) > 1e-7 * (1.0 + np.abs(region.b).max(initial=0.0)):
        return None
    return x


def _project(region: ReducedInstance, x: np.ndarray) -> np.ndarray | None:
    try:
        res = solve_convex_qp(2.0 * np.eye(region.n), -2.0 * x, region.A, region.b)
    except QpInfeasibleError:
        return None
    return res.x


def _search(region: ReducedInstance, start: np.ndarray, tols: Tolerances,
            round_index: int) -> KktPoint:
    """Local search with one perturbed restart when certification fails."""
    point = finite_gmc(region, start, tols)
    if point.certified:
        return point
    rng = np.random.default_rng(_JITTER_SEED + round_index)
    jitter = start + 1e-6 * (2.0 * rng.random(region.n) - 1.0)
    projected = _project(region, jitter)
    if projected is None:
        return point
    retry = finite_gmc(region, projected, tols)
    if retry.certified or retry.objective < point.objective:
        return retry
    return point


def solve(inst: ReducedInstance, eps: float = 1e-4, eta: float = 9e-5, *,
          conic_tol: float = 1e-7, conic_max_iters: int = 200000,
          time_limit: float = 3600.0, max_cuts: int = 200,
          tols: Tolerances = Tolerances(), record_timing: bool = True) -> SolverReport:
    """Run the cutting-plane loop on a reduced instance.

    Requires 0 < eta <= eps.  ``record_timing=False`` zeroes every timing
    field in the trace and report (the limits still use the real clock),
    which makes repeated runs byte-identical when serialized.
    """
    if not (0.0 < eta <= eps):
        raise ValueError("parameters must satisfy 0 < eta <= eps")
    t_start = time.perf_counter()
    clock = (lambda: time.perf_counter() - t_start)
    stamp = clock if record_timing else (lambda: 0.0)

    state = SolverState(region=inst)
    trace: list[TraceRecord] = []
    warm_bound: ConicSolution | None = None
    warm_cut: ConicSolution | None = None

    t0 = stamp()
    bres = dnn_lower_bound(state.region, conic_tol=conic_tol, max_iters=conic_max_iters)
    bound_time = stamp() - t0
    warm_bound = bres.solution
    state.v_lower_region = bres.safe_bound
    z = bres.z if bres.z is not None else _feasible_point(state.region)
    if z is None:
        raise ValueError("feasible region is empty; reduce() should have rejected it")

    t0 = stamp()
    kkt = _search(state.region, z, tols, round_index=0)
    search_time = stamp() - t0
    state.v_upper = kkt.objective
    state.best_x = kkt.x

    gap = relative_gap(state.v_upper, state.v_lower, eps)
    initial_gap = gap
    trace.append(TraceRecord(0, state.v_upper, state.v_lower_region, state.v_lower_cut,
                             gap, 0.0, bound_time, search_time))

    status = None
    polished = False
    while True:
        if state.v_upper - state.v_lower_region <= eps * max(abs(state.v_upper), eps):
            status = "solved"
            break
        if clock() >= time_limit:
            status = "time_limit"
            break
        if len(state.cuts) >= max_cuts:
            status = "max_cuts"
            break

        # near termination the residual correction dominates the remaining
        # gap; one warm-started high-accuracy bound solve is far cheaper than
        # cutting at an almost-optimal (hence nearly degenerate) anchor
        if not polished and np.isfinite(state.v_lower_region) and (
                state.v_upper - state.v_lower_region
                <= 50.0 * eps * max(abs(state.v_upper), eps)):
            polished = True
            t0 = stamp()
            bres = dnn_lower_bound(state.region, conic_tol=conic_tol * 1e-2,
                                   max_iters=conic_max_iters, warm=warm_bound)
            bound_time = stamp() - t0
            if np.isfinite(bres.safe_bound):
                warm_bound = bres.solution
                state.v_lower_region = max(state.v_lower_region, bres.safe_bound)
                if bres.z is not None:
                    z = bres.z
            gap = relative_gap(state.v_upper, state.v_lower, eps)
            trace.append(TraceRecord(state.iteration, state.v_upper, state.v_lower_region,
                                     state.v_lower_cut, gap, 0.0, bound_time, 0.0))
            continue

        state.iteration += 1
        nu_ref = state.v_upper - eta * max(abs(state.v_upper), eps)
        nu = state.v_upper - eps * max(abs(state.v_upper), eps)
        anchor = kkt.x
        phi_anchor = state.region.objective(anchor)

        t0 = stamp()
        try:
            new_cut, _cert = dnn_cut(state.region, anchor, z, nu_ref, nu, eps=eps,
                                     conic_tol=conic_tol, max_iters=conic_max_iters,
                                     warm=warm_cut, warm_bound=warm_bound)
        except CutGenerationError as first_err:
            beta2 = 2.0 * beta_policy(phi_anchor, nu_ref, eps)
            if phi_anchor - nu_ref > 0:
                beta2 = min(beta2, phi_anchor - nu_ref)
            log.debug("cut generation failed (%s); retrying with beta=%.3e", first_err, beta2)
            try:
                new_cut, _cert = dnn_cut(state.region, anchor, z, nu_ref, nu, eps=eps,
                                         beta=beta2, conic_tol=conic_tol,
                                         max_iters=conic_max_iters, warm_bound=warm_bound)
            except CutGenerationError as second_err:
                log.warning("cut generation failed twice (%s); reporting honest gap", second_err)
                status = "cut_failed"
                cut_time = stamp() - t0
                trace.append(TraceRecord(state.iteration, state.v_upper,
                                         state.v_lower_region, state.v_lower_cut,
                                         relative_gap(state.v_upper, state.v_lower, eps),
                                         cut_time, 0.0, 0.0))
                break
        cut_time = stamp() - t0

        row, rhs = new_cut.row()
        state.region = state.region.with_rows(row[None, :], np.array([rhs]),
                                              (f"cut[{len(state.cuts)}]",))
        state.cuts.append(new_cut)
        state.v_lower_cut = min(new_cut.removed_bound, state.v_lower_cut)
        polished = False

        t0 = stamp()
        bres = dnn_lower_bound(state.region, conic_tol=conic_tol,
                               max_iters=conic_max_iters, warm=warm_bound)
        bound_time = stamp() - t0
        warm_bound = bres.solution
        warm_cut = None  # layouts shift with the region; cut warm start is per-round
        if np.isfinite(bres.safe_bound):
            state.v_lower_region = bres.safe_bound
            z = bres.z if bres.z is not None else _feasible_point(state.region)
        else:
            fp = _feasible_point(state.region)
            if fp is None:
                # cuts consumed the whole region: everything left is covered
                # by the removed-slab bounds
                state.v_lower_region = np.inf
                z = None
            else:
                # keep the previous region bound: the region only shrank,
                # so it is still valid
                z = bres.z if bres.z is not None else fp

        search_time = 0.0
        if z is not None:
            t0 = stamp()
            kkt = _search(state.region, z, tols, round_index=state.iteration)
            search_time = stamp() - t0
            if kkt.objective < state.v_upper:
                state.v_upper = kkt.objective
                state.best_x = kkt.x

        gap = relative_gap(state.v_upper, state.v_lower, eps)
        trace.append(TraceRecord(state.iteration, state.v_upper, state.v_lower_region,
                                 state.v_lower_cut, gap, cut_time, bound_time, search_time))

    state.elapsed = clock() if record_timing else 0.0
    final_gap = relative_gap(state.v_upper, state.v_lower, eps)
    return SolverReport(
        upper_bound=state.v_upper,
        lower_bound=state.v_lower,
        initial_gap=initial_gap,
        final_gap=final_gap,
        num_cuts=len(state.cuts),
        status=status,
        trace=tuple(trace),
        best_x=state.best_x,
        cuts=tuple(state.cuts),
        wall_time=state.elapsed,
    )
