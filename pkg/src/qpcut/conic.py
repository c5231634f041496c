"""First-order solver for conic linear programs over free/nonneg/PSD products.

Problems are stated as

    min  c.x   s.t.  A x = b,  x in K,

where K is an ordered product of free, nonnegative and PSD cones.  Symmetric
matrix variables are carried in packed scaled-triangle form (column-major
upper triangle, off-diagonal entries times sqrt(2)) so Frobenius inner
products become plain dot products and elementwise nonnegativity of a
symmetric block is one nonnegative cone per stored entry.

The solver is an over-relaxed ADMM splitting between the affine set
{Ax = b} (one cached Cholesky factorization of A A^T, reused across all
iterations and penalty updates) and the cone product.  It returns an
approximate primal-dual pair with explicit residuals; downstream safeguards
never assume exactness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

__all__ = [
    "ConeBlock",
    "ConicLP",
    "ConicSolution",
    "free_block",
    "nonneg_block",
    "psd_block",
    "packed_dim",
    "packed_indices",
    "pack_symmetric",
    "unpack_symmetric",
    "conjugation_matrix",
    "solve_conic",
    "extract_block",
]

_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# cone layout and symmetric packing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConeBlock:
    """One block of the cone product: kind in {"free", "nonneg", "psd"}.

    ``size`` is the vector length for free/nonneg blocks and the matrix side
    for psd blocks (stored dimension is then size*(size+1)//2).
    """

    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in ("free", "nonneg", "psd"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 0:
            raise ValueError("block size must be nonnegative")

    @property
    def dim(self) -> int:
        if self.kind == "psd":
            return packed_dim(self.size)
        return self.size


def free_block(k: int) -> ConeBlock:
    return ConeBlock("free", k)


def nonneg_block(k: int) -> ConeBlock:
    return ConeBlock("nonneg", k)


def psd_block(side: int) -> ConeBlock:
    return ConeBlock("psd", side)


def packed_dim(side: int) -> int:
    return side * (side + 1) // 2


def packed_indices(side: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) index arrays of the packed order.

    Column-major upper triangle: (0,0), (0,1), (1,1), (0,2), ...  With this
    order, bordering a matrix by one extra row/column appends entries at the
    end of the packed vector, which is what warm starts across appended
    constraint rows rely on.
    """
    rows = np.concatenate([np.arange(j + 1) for j in range(side)]) if side else np.zeros(0, int)
    cols = np.concatenate([np.full(j + 1, j) for j in range(side)]) if side else np.zeros(0, int)
    return rows, cols


def _packed_scale(side: int) -> np.ndarray:
    rows, cols = packed_indices(side)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return scale


def pack_symmetric(M: np.ndarray) -> np.ndarray:
    """Packed scaled upper triangle of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    side = M.shape[0]
    rows, cols = packed_indices(side)
    return M[rows, cols] * _packed_scale(side)


def unpack_symmetric(v: np.ndarray, side: int) -> np.ndarray:
    """Inverse of :func:`pack_symmetric`."""
    v = np.asarray(v, dtype=float)
    if v.shape != (packed_dim(side),):
        raise ValueError(f"packed vector has length {v.shape}, expected {packed_dim(side)}")
    rows, cols = packed_indices(side)
    vals = v / _packed_scale(side)
    M = np.zeros((side, side))
    M[rows, cols] = vals
    M[cols, rows] = vals
    return M


def conjugation_matrix(B: np.ndarray) -> np.ndarray:
    """Matrix of the linear map svec(T) -> svec(B^T T B) on packed coordinates.

    B is (m x n); the result maps packed m-side symmetric vectors to packed
    n-side ones, shape (packed_dim(n), packed_dim(m)).
    """
    B = np.asarray(B, dtype=float)
    m, n = B.shape
    rows_m, cols_m = packed_indices(m)
    rows_n, cols_n = packed_indices(n)
    P1 = B[rows_m]  # (t_m, n)
    P2 = B[cols_m]
    W = P1[:, :, None] * P2[:, None, :] + P2[:, :, None] * P1[:, None, :]
    src_scale = np.where(rows_m == cols_m, 0.5, 1.0 / _SQRT2)
    W *= src_scale[:, None, None]
    G = W[:, rows_n, cols_n] * _packed_scale(n)[None, :]
    return G.T.copy()


# ---------------------------------------------------------------------------
# problem / solution containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConicLP:
    """min objective.x  s.t.  A x = b,  x in the cone product ``blocks``."""

    objective: np.ndarray
    A: np.ndarray
    b: np.ndarray
    blocks: tuple[ConeBlock, ...]

    def __post_init__(self):
        obj = np.asarray(self.objective, dtype=float)
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "objective", obj)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        dim = sum(blk.dim for blk in self.blocks)
        if obj.shape != (dim,):
            raise ValueError(f"objective length {obj.shape} does not match cone dimension {dim}")
        if A.ndim != 2 or A.shape[1] != dim:
            raise ValueError(f"constraint matrix shape {A.shape} does not match cone dimension {dim}")
        if b.shape != (A.shape[0],):
            raise ValueError(f"rhs length {b.shape} does not match row count {A.shape[0]}")
        for arr in (obj, A, b):
            if not np.all(np.isfinite(arr)):
                raise ValueError("conic problem data contains non-finite entries")

    @property
    def dim(self) -> int:
        return sum(blk.dim for blk in self.blocks)

    def block_offsets(self) -> list[int]:
        offs = [0]
        for blk in self.blocks:
            offs.append(offs[-1] + blk.dim)
        return offs


@dataclass
class ConicSolution:
    """Approximate primal-dual pair with explicit residuals.

    ``x`` lies in the cone product exactly (it is a projection output) and
    satisfies A x = b only up to ``primal_residual``.  ``y`` is the equality
    multiplier, ``s`` the dual-cone slack (exactly in the dual cone).
    Residuals are relative:

        primal_residual = |A x - b|_2 / (1 + |b|_2)
        dual_residual   = |A^T y + c - s|_2 / (1 + |c|_2)
        gap             = |c.x + b.y| / (1 + |c.x| + |b.y|)
    """

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    primal_residual: float
    dual_residual: float
    gap: float
    primal_objective: float
    dual_objective: float
    status: str
    iterations: int
    rho: float = 1.0


# ---------------------------------------------------------------------------
# cone projection
# ---------------------------------------------------------------------------


def _project_cone(v: np.ndarray, blocks: tuple[ConeBlock, ...], offsets: list[int]) -> np.ndarray:
    out = v.copy()
    for blk, lo in zip(blocks, offsets):
        hi = lo + blk.dim
        if blk.kind == "free":
            continue
        if blk.kind == "nonneg":
            np.maximum(out[lo:hi], 0.0, out=out[lo:hi])
        else:
            M = unpack_symmetric(out[lo:hi], blk.size)
            w, V = np.linalg.eigh(M)
            if w[0] >= 0.0:
                continue
            pos = w > 0.0
            P = (V[:, pos] * w[pos]) @ V[:, pos].T
            out[lo:hi] = pack_symmetric(0.5 * (P + P.T))
    return out


def extract_block(sol: ConicSolution, layout: ConicLP | tuple[ConeBlock, ...], index: int,
                  part: str = "primal") -> np.ndarray:
    """Unflatten one block of a solution vector.

    PSD blocks come back as full symmetric matrices (scaling undone); free
    and nonneg blocks as plain vector slices.  ``part`` selects the primal
    point (default), the dual slack "s", or the equality multiplier "y"
    (only meaningful when rows are indexed like a packed block, so "y" is
    not block-indexed here and raises).
    """
    blocks = layout.blocks if isinstance(layout, ConicLP) else tuple(layout)
    if not 0 <= index < len(blocks):
        raise IndexError(f"block index {index} out of range for {len(blocks)} blocks")
    if part == "primal":
        vec = sol.x
    elif part == "s":
        vec = sol.s
    else:
        raise ValueError(f"unknown part {part!r}")
    offs = [0]
    for blk in blocks:
        offs.append(offs[-1] + blk.dim)
    lo, hi = offs[index], offs[index + 1]
    blk = blocks[index]
    if blk.kind == "psd":
        return unpack_symmetric(vec[lo:hi], blk.size)
    return vec[lo:hi].copy()


# ---------------------------------------------------------------------------
# equilibration
# ---------------------------------------------------------------------------


def _ruiz_equilibrate(A: np.ndarray, blocks: tuple[ConeBlock, ...], offsets: list[int],
                      iters: int = 10) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/column scaling of A with cone-respecting column groups.

    Column scalings must be a single scalar per PSD block (anything else
    breaks cone invariance under scaling), per-entry elsewhere.
    """
    A = A.copy()
    p, n = A.shape
    D = np.ones(p)
    E = np.ones(n)
    psd_slices = [(lo, lo + blk.dim) for blk, lo in zip(blocks, offsets) if blk.kind == "psd"]
    for _ in range(iters):
        row = np.abs(A).max(axis=1)
        row[row == 0] = 1.0
        d = 1.0 / np.sqrt(row)
        A *= d[:, None]
        D *= d
        col = np.abs(A).max(axis=0)
        col[col == 0] = 1.0
        e = 1.0 / np.sqrt(col)
        for lo, hi in psd_slices:
            g = np.exp(np.mean(np.log(e[lo:hi])))
            e[lo:hi] = g
        A *= e[None, :]
        E *= e
    return A, D, E


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------


def solve_conic(problem: ConicLP, tol: float = 1e-7, max_iters: int = 200000,
                warm: ConicSolution | None = None, *, over_relax: float = 1.6,
                rho: float = 1.0, check_every: int = 25,
                ruiz_iters: int = 10) -> ConicSolution:
    """Solve a conic LP by over-relaxed ADMM with a cached factorization.

    A warm solution may come from a problem whose cone dimension was smaller
    (rows appended to the underlying QP grow the trailing block); its vectors
    are zero-padded at the end.  The equality-row count must match, otherwise
    the warm start is ignored.

    Never claims exactness: callers must consume the reported residuals.
    Returns status "converged", "max_iters" or "infeasibility_suspected"
    (iterates diverging, which for the problems assembled in this package
    signals an empty feasible region downstream).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    blocks = problem.blocks
    offsets = problem.block_offsets()[:-1]
    A0 = problem.A
    b0 = problem.b
    c0 = problem.objective
    p, n = A0.shape
    if p == 0:
        raise ValueError("conic problem must have at least one equality row")

    Ah, D, E = _ruiz_equilibrate(A0, blocks, offsets, iters=ruiz_iters)
    bh = D * b0
    ch = E * c0

    AAT = Ah @ Ah.T
    try:
        chol = scipy.linalg.cho_factor(AAT, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        # tiny diagonal lift for borderline rank; assemblies in this package
        # always produce full row rank, so this is a numerical backstop only
        jitter = 1e-12 * (1.0 + np.trace(AAT) / p)
        chol = scipy.linalg.cho_factor(AAT + jitter * np.eye(p), lower=True, check_finite=False)
    Ac = Ah @ ch

    x = np.zeros(n)
    u = np.zeros(n)
    y = np.zeros(p)
    if warm is not None and warm.y.shape == (p,) and warm.x.shape[0] <= n:
        k = warm.x.shape[0]
        x[:k] = warm.x / E[:k]
        y = warm.y / D
        rho = warm.rho
        s_scaled = np.zeros(n)
        s_scaled[:k] = E[:k] * warm.s
        u = -s_scaled / rho
    z = _project_cone(x, blocks, offsets)

    bnorm = 1.0 + np.linalg.norm(b0)
    cnorm = 1.0 + np.linalg.norm(c0)

    status = "max_iters"
    pres = dres = gap = np.inf
    pobj = dobj = np.nan
    it = 0
    for it in range(1, max_iters + 1):
        v = z - u
        rhs = rho * (Ah @ v - bh) - Ac
        y = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        x = v - (ch + Ah.T @ y) / rho
        xr = over_relax * x + (1.0 - over_relax) * z
        z = _project_cone(xr + u, blocks, offsets)
        u = u + xr - z

        if it % check_every == 0 or it == max_iters:
            x_u = E * z
            y_u = D * y
            s_u = (-rho) * u / E
            pres = np.linalg.norm(A0 @ x_u - b0) / bnorm
            dres = np.linalg.norm(A0.T @ y_u + c0 - s_u) / cnorm
            pobj = float(c0 @ x_u)
            dobj = float(-b0 @ y_u)
            gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
            if max(pres, dres, gap) <= tol:
                status = "converged"
                break
            if not np.isfinite(pobj) or np.abs(x_u).max(initial=0.0) > 1e12:
                status = "infeasibility_suspected"
                break
            if it % (check_every * 4) == 0:
                ratio = pres / max(dres, 1e-300)
                if ratio > 10.0 or ratio < 0.1:
                    scale = float(np.clip(np.sqrt(ratio), 0.1, 10.0))
                    new_rho = float(np.clip(rho * scale, 1e-6, 1e6))
                    if new_rho != rho:
                        u *= rho / new_rho
                        rho = new_rho

    x_u = E * z
    y_u = D * y
    s_u = (-rho) * u / E
    if status != "infeasibility_suspected":
        pres = float(np.linalg.norm(A0 @ x_u - b0) / bnorm)
        dres = float(np.linalg.norm(A0.T @ y_u + c0 - s_u) / cnorm)
        pobj = float(c0 @ x_u)
        dobj = float(-b0 @ y_u)
        gap = float(abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)))
    if status == "max_iters":
        log.debug("conic solve hit iteration cap: pres=%.2e dres=%.2e gap=%.2e", pres, dres, gap)
    return ConicSolution(
        x=x_u, y=y_u, s=s_u,
        primal_residual=float(pres), dual_residual=float(dres), gap=float(gap),
        primal_objective=float(pobj) if np.isfinite(pobj) else pobj,
        dual_objective=float(dobj) if np.isfinite(dobj) else dobj,
        status=status, iterations=it, rho=rho,
    )
