"""QP instance model: ingestion, reduction to pure-inequality form, synthetic
generation, and the certified enclosing-ball radius used by the safeguards.

The problem is

    min  x^T Q x + 2 d^T x
    s.t. A_ineq x <= b_ineq,  A_eq x = b_eq,  lower <= x <= upper,

with Q symmetric (symmetrized on ingestion) and a bounded feasible region.
Reduction splits each equality into opposing inequalities and each finite
variable bound into one row, producing the pure-inequality description the
solver works with, together with a radius r0 certifying F inside a Euclidean
ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

__all__ = [
    "InstanceError",
    "ParseError",
    "DimensionError",
    "UnboundedRegionError",
    "EmptyRegionError",
    "QpInstance",
    "ReducedInstance",
    "SyntheticSpec",
    "load_instance",
    "save_instance",
    "reduce_instance",
    "radius_bound",
    "generate_synthetic",
    "generate_synthetic_with_point",
]


class InstanceError(ValueError):
    """Base class for instance ingestion/validation failures."""


class ParseError(InstanceError):
    def __init__(self, message: str, line: int, column: int | None = None):
        loc = f"line {line}" + (f", column {column}" if column is not None else "")
        super().__init__(f"{loc}: {message}")
        self.line = line
        self.column = column


class DimensionError(InstanceError):
    pass


class UnboundedRegionError(InstanceError):
    pass


class EmptyRegionError(InstanceError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QpInstance:
    """Problem data before reduction.  Immutable after construction.

    ``lower``/``upper`` are length-n vectors where +-inf marks an absent
    bound; both may be None (no variable bounds at all).
    """

    n: int
    Q: np.ndarray
    d: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    name: str = "instance"

    def __post_init__(self):
        n = self.n
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (n, n):
            raise DimensionError(f"Q has shape {Q.shape}, expected ({n}, {n})")
        Q = 0.5 * (Q + Q.T)
        d = np.asarray(self.d, dtype=float)
        if d.shape != (n,):
            raise DimensionError(f"d has shape {d.shape}, expected ({n},)")
        A = np.asarray(self.A_ineq, dtype=float).reshape(-1, n)
        b = np.asarray(self.b_ineq, dtype=float).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise DimensionError(f"b_ineq has {b.shape[0]} entries for {A.shape[0]} rows")
        Ae = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        be = np.asarray(self.b_eq, dtype=float).reshape(-1)
        if be.shape[0] != Ae.shape[0]:
            raise DimensionError(f"b_eq has {be.shape[0]} entries for {Ae.shape[0]} rows")
        for arr in (Q, d, A, b, Ae, be):
            if not np.all(np.isfinite(arr)):
                raise InstanceError("instance data contains non-finite entries")
        lower = self.lower
        upper = self.upper
        if lower is not None:
            lower = np.asarray(lower, dtype=float)
            if lower.shape != (n,):
                raise DimensionError(f"lower has shape {lower.shape}, expected ({n},)")
            if np.any(np.isnan(lower)) or np.any(lower == np.inf):
                raise InstanceError("lower bounds must be finite or -inf")
            object.__setattr__(self, "lower", _readonly(lower))
        if upper is not None:
            upper = np.asarray(upper, dtype=float)
            if upper.shape != (n,):
                raise DimensionError(f"upper has shape {upper.shape}, expected ({n},)")
            if np.any(np.isnan(upper)) or np.any(upper == -np.inf):
                raise InstanceError("upper bounds must be finite or +inf")
            object.__setattr__(self, "upper", _readonly(upper))
        object.__setattr__(self, "Q", _readonly(Q))
        object.__setattr__(self, "d", _readonly(d))
        object.__setattr__(self, "A_ineq", _readonly(A))
        object.__setattr__(self, "b_ineq", _readonly(b))
        object.__setattr__(self, "A_eq", _readonly(Ae))
        object.__setattr__(self, "b_eq", _readonly(be))

    @property
    def m(self) -> int:
        return self.A_ineq.shape[0]

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x + 2.0 * self.d @ x)


@dataclass(frozen=True)
class ReducedInstance:
    """Pure-inequality form {x : A x <= b} with a certified enclosing radius.

    ``row_provenance`` tags each row: "inequality[i]", "normalization[i]",
    "equality[i]+", "equality[i]-", "lower-bound[i]", "upper-bound[i]",
    "cut[k]".
    """

    n: int
    Q: np.ndarray
    d: np.ndarray
    A: np.ndarray
    b: np.ndarray
    row_provenance: tuple[str, ...]
    radius: float
    name: str = "instance"

    def __post_init__(self):
        Q = _readonly(0.5 * (np.asarray(self.Q, float) + np.asarray(self.Q, float).T))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "d", _readonly(self.d))
        A = np.asarray(self.A, dtype=float).reshape(-1, self.n)
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "b", _readonly(np.asarray(self.b, float).reshape(-1)))
        if self.b.shape[0] != self.A.shape[0]:
            raise DimensionError("A and b row counts differ")
        if len(self.row_provenance) != self.A.shape[0]:
            raise DimensionError("row_provenance length does not match row count")
        if not (self.radius > 0.0) or not math.isfinite(self.radius):
            raise InstanceError("radius must be positive and finite")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.Q @ x + 2.0 * self.d @ x)

    def violation(self, x: np.ndarray) -> float:
        """Largest constraint violation max(Ax - b, 0)."""
        return float(np.maximum(self.A @ x - self.b, 0.0).max(initial=0.0))

    def with_rows(self, rows: np.ndarray, rhs: np.ndarray,
                  tags: tuple[str, ...]) -> "ReducedInstance":
        """Append constraint rows (e.g. cuts); the radius remains valid
        because the region only shrinks."""
        rows = np.asarray(rows, dtype=float).reshape(-1, self.n)
        rhs = np.asarray(rhs, dtype=float).reshape(-1)
        return ReducedInstance(
            n=self.n, Q=self.Q, d=self.d,
            A=np.vstack([self.A, rows]), b=np.concatenate([self.b, rhs]),
            row_provenance=self.row_provenance + tags,
            radius=self.radius, name=self.name,
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one random instance; fully determined by the seed."""

    n: int
    m_ineq: int
    m_eq: int
    distribution: str
    density: float
    seed: int

    def __post_init__(self):
        if self.n < 1 or self.m_ineq < 1:
            raise InstanceError("n and m_ineq must be at least 1")
        if self.m_eq < 0:
            raise InstanceError("m_eq must be nonnegative")
        if self.distribution not in ("normal", "uniform"):
            raise InstanceError(f"unknown distribution {self.distribution!r}")
        if not 0.0 < self.density <= 1.0:
            raise InstanceError("density must lie in (0, 1]")


# ---------------------------------------------------------------------------
# canonical / dense-text formats
# ---------------------------------------------------------------------------

_SECTIONS = ("Q", "d", "A", "b", "Aeq", "beq", "lb", "ub")


def _parse_float(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"bad numeric literal {tok!r}", line) from None
    if math.isnan(v):
        raise ParseError(f"non-finite entry {tok!r}", line)
    return v


def _parse_int(tok: str, line: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"bad integer literal {tok!r}", line) from None


def load_instance(path, format: str = "canonical") -> QpInstance:
    """Load an instance file; ``format`` is "canonical" or "dense-text"."""
    if format == "canonical":
        return _load_canonical(path)
    if format == "dense-text":
        return _load_dense_text(path)
    raise ValueError(f"unknown format {format!r}")


def _load_canonical(path) -> QpInstance:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)]
    lines = [(no, ln) for no, ln in lines if ln]
    if not lines:
        raise ParseError("empty file", 1)
    no, header = lines[0]
    if header.split() != ["qpinst", "1"]:
        raise ParseError(f"expected magic 'qpinst 1', got {header!r}", no)
    if len(lines) < 2:
        raise ParseError("missing dimension line", no)
    no, dims = lines[1]
    toks = dims.split()
    if len(toks) != 4:
        raise ParseError("dimension line must be 'n m m_eq has_bounds'", no)
    n, m, m_eq, has_bounds = (_parse_int(t, no) for t in toks)
    if n < 1 or m < 0 or m_eq < 0 or has_bounds not in (0, 1):
        raise ParseError("invalid dimensions", no)

    Q = np.zeros((n, n))
    d = np.zeros(n)
    A = np.zeros((m, n))
    b = np.zeros(m)
    Ae = np.zeros((m_eq, n))
    be = np.zeros(m_eq)
    lb = np.zeros(n)
    ub = np.zeros(n)

    section = None
    for no, ln in lines[2:]:
        if ln in _SECTIONS:
            section = ln
            continue
        if section is None:
            raise ParseError(f"data before any section header: {ln!r}", no)
        toks = ln.split()
        if section in ("Q", "A", "Aeq"):
            if len(toks) != 3:
                raise ParseError(f"matrix entry needs 'i j value', got {ln!r}", no)
            i = _parse_int(toks[0], no) - 1
            j = _parse_int(toks[1], no) - 1
            v = _parse_float(toks[2], no)
            if not math.isfinite(v):
                raise ParseError("matrix entries must be finite", no)
            if section == "Q":
                if not (0 <= i < n and 0 <= j < n):
                    raise ParseError(f"Q index ({i + 1}, {j + 1}) out of range", no)
                if i > j:
                    raise ParseError("Q triplets must give the upper triangle (i <= j)", no)
                Q[i, j] += v
                if i != j:
                    Q[j, i] += v
            elif section == "A":
                if not (0 <= i < m and 0 <= j < n):
                    raise ParseError(f"A index ({i + 1}, {j + 1}) out of range", no)
                A[i, j] += v
            else:
                if not (0 <= i < m_eq and 0 <= j < n):
                    raise ParseError(f"Aeq index ({i + 1}, {j + 1}) out of range", no)
                Ae[i, j] += v
        else:
            if len(toks) != 2:
                raise ParseError(f"vector entry needs 'i value', got {ln!r}", no)
            i = _parse_int(toks[0], no) - 1
            v = _parse_float(toks[1], no)
            target, size = {
                "d": (d, n), "b": (b, m), "beq": (be, m_eq), "lb": (lb, n), "ub": (ub, n),
            }[section]
            if not 0 <= i < size:
                raise ParseError(f"{section} index {i + 1} out of range (size {size})", no)
            if section not in ("lb", "ub") and not math.isfinite(v):
                raise ParseError("vector entries must be finite", no)
            target[i] += v

    name = str(getattr(path, "stem", None) or _stem(path))
    return QpInstance(
        n=n, Q=Q, d=d, A_ineq=A, b_ineq=b, A_eq=Ae, b_eq=be,
        lower=lb if has_bounds else None, upper=ub if has_bounds else None,
        name=name,
    )


def _stem(path) -> str:
    import os

    base = os.path.basename(str(path))
    return os.path.splitext(base)[0]


def _load_dense_text(path) -> QpInstance:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(raw) if ln.strip()]
    if not rows:
        raise ParseError("empty file", 1)
    pos = 0

    def take(count: int, what: str) -> np.ndarray:
        nonlocal pos
        if pos >= len(rows):
            raise ParseError(f"unexpected end of file while reading {what}", rows[-1][0])
        no, toks = rows[pos]
        pos += 1
        if len(toks) != count:
            raise ParseError(f"{what}: expected {count} values, got {len(toks)}", no)
        return np.array([_parse_float(t, no) for t in toks])

    no0, toks0 = rows[0]
    if len(toks0) != 4:
        raise ParseError("first line must be 'n m m_eq has_bounds'", no0)
    n, m, m_eq, has_bounds = (_parse_int(t, no0) for t in toks0)
    pos = 1
    Q = np.vstack([take(n, f"Q row {i + 1}") for i in range(n)])
    d = take(n, "d")
    A = np.vstack([take(n, f"A row {i + 1}") for i in range(m)]) if m else np.zeros((0, n))
    b = take(m, "b") if m else np.zeros(0)
    Ae = np.vstack([take(n, f"Aeq row {i + 1}") for i in range(m_eq)]) if m_eq else np.zeros((0, n))
    be = take(m_eq, "beq") if m_eq else np.zeros(0)
    lb = take(n, "lb") if has_bounds else None
    ub = take(n, "ub") if has_bounds else None
    return QpInstance(n=n, Q=Q, d=d, A_ineq=A, b_ineq=b, A_eq=Ae, b_eq=be,
                      lower=lb, upper=ub, name=_stem(path))


def _fmt(v: float) -> str:
    if v == np.inf:
        return "inf"
    if v == -np.inf:
        return "-inf"
    return repr(float(v))


def save_instance(inst: QpInstance, path) -> None:
    """Write the canonical format (deterministic byte-for-byte)."""
    out = ["qpinst 1"]
    has_bounds = 1 if (inst.lower is not None or inst.upper is not None) else 0
    out.append(f"{inst.n} {inst.m} {inst.m_eq} {has_bounds}")

    def triplets(name: str, M: np.ndarray, upper_only: bool = False):
        entries = []
        for i in range(M.shape[0]):
            j0 = i if upper_only else 0
            for j in range(j0, M.shape[1]):
                if M[i, j] != 0.0:
                    entries.append(f"{i + 1} {j + 1} {_fmt(M[i, j])}")
        if entries:
            out.append(name)
            out.extend(entries)

    def vector(name: str, v: np.ndarray, always: bool = False):
        entries = [f"{i + 1} {_fmt(v[i])}" for i in range(v.shape[0]) if always or v[i] != 0.0]
        if entries:
            out.append(name)
            out.extend(entries)

    triplets("Q", inst.Q, upper_only=True)
    vector("d", inst.d)
    triplets("A", inst.A_ineq)
    vector("b", inst.b_ineq)
    triplets("Aeq", inst.A_eq)
    vector("beq", inst.b_eq)
    if has_bounds:
        lower = inst.lower if inst.lower is not None else np.full(inst.n, -np.inf)
        upper = inst.upper if inst.upper is not None else np.full(inst.n, np.inf)
        vector("lb", lower, always=True)
        vector("ub", upper, always=True)
    text = "\n".join(out) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# reduction and radius
# ---------------------------------------------------------------------------


def reduce_instance(inst: QpInstance) -> ReducedInstance:
    """Reduce to pure-inequality form and certify boundedness.

    Equalities split into opposing inequality pairs, finite variable bounds
    become single rows.  Raises :class:`UnboundedRegionError` if any
    coordinate LP is unbounded and :class:`EmptyRegionError` if the region
    is empty.
    """
    n = inst.n
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    tags: list[str] = []
    ones = np.ones(n)
    for i in range(inst.m):
        a = inst.A_ineq[i]
        rows.append(a)
        rhs.append(float(inst.b_ineq[i]))
        if n > 1 and np.array_equal(a, ones) and inst.b_ineq[i] > 0:
            tags.append(f"normalization[{i}]")
        else:
            tags.append(f"inequality[{i}]")
    for i in range(inst.m_eq):
        a = inst.A_eq[i]
        beta = float(inst.b_eq[i])
        rows.append(a)
        rhs.append(beta)
        tags.append(f"equality[{i}]+")
        rows.append(-a)
        rhs.append(-beta)
        tags.append(f"equality[{i}]-")
    if inst.lower is not None:
        for i in range(n):
            if np.isfinite(inst.lower[i]):
                e = np.zeros(n)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-float(inst.lower[i]))
                tags.append(f"lower-bound[{i}]")
    if inst.upper is not None:
        for i in range(n):
            if np.isfinite(inst.upper[i]):
                e = np.zeros(n)
                e[i] = 1.0
                rows.append(e)
                rhs.append(float(inst.upper[i]))
                tags.append(f"upper-bound[{i}]")
    A = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.array(rhs)
    r0 = radius_bound(A, b)
    return ReducedInstance(n=n, Q=inst.Q, d=inst.d, A=A, b=b,
                           row_provenance=tuple(tags), radius=r0, name=inst.name)


def _box_from_rows(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate bounds implied by single-variable rows only."""
    n = A.shape[1]
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    for i in range(A.shape[0]):
        nz = np.nonzero(A[i])[0]
        if nz.size != 1:
            continue
        j = nz[0]
        coef = A[i, j]
        bound = b[i] / coef
        if coef > 0:
            hi[j] = min(hi[j], bound)
        else:
            lo[j] = max(lo[j], bound)
    return lo, hi


def coordinate_box(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tight per-coordinate box of {x : Ax <= b} via 2n linear programs."""
    n = A.shape[1]
    lo = np.empty(n)
    hi = np.empty(n)
    bounds = [(None, None)] * n
    for j in range(n):
        c = np.zeros(n)
        for sign, target in ((1.0, lo), (-1.0, hi)):
            c[j] = sign
            res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
            if res.status == 2:
                raise EmptyRegionError("feasible region is empty")
            if res.status == 3:
                raise UnboundedRegionError(
                    f"coordinate {j} is unbounded; the feasible region must be bounded")
            if res.status != 0:
                raise InstanceError(f"coordinate LP failed: {res.message}")
            target[j] = sign * res.fun
        c[j] = 0.0
    return lo, hi


def radius_bound(A: np.ndarray, b: np.ndarray) -> float:
    """r0 with {x : Ax <= b} contained in the Euclidean ball of radius r0.

    Cheap certificates first: a full box read off single-variable rows gives
    the componentwise max-norm ball; nonnegativity plus an all-ones row with
    rhs t gives r0 = t.  Otherwise 2n LPs compute the tight box.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    candidates = []
    lo, hi = _box_from_rows(A, b)
    if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
        if np.any(lo > hi):
            raise EmptyRegionError("bound rows are contradictory (empty region)")
        candidates.append(float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))))
    if np.all(lo >= 0.0):
        ones = np.ones(n)
        for i in range(A.shape[0]):
            if np.array_equal(A[i], ones) and b[i] > 0:
                candidates.append(float(b[i]))
    if not candidates:
        lo, hi = coordinate_box(A, b)
        candidates.append(float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))))
    return max(min(candidates), 1e-8)  # floor covers the degenerate region {0}


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


def _sparse_draw(rng: np.random.Generator, shape, distribution: str, density: float) -> np.ndarray:
    vals = rng.random(shape) if distribution == "uniform" else rng.standard_normal(shape)
    mask = rng.random(shape) < density
    return np.where(mask, vals, 0.0)


def density_token(density: float) -> str:
    """Compact group token mirroring the 10x-density naming convention."""
    return f"{10.0 * density:g}"


def generate_synthetic_with_point(spec: SyntheticSpec) -> tuple[QpInstance, np.ndarray]:
    """Generate an instance plus the strictly feasible interior point used
    to set the right-hand sides (exposed for validation)."""
    rng = np.random.default_rng(spec.seed)
    n, mi = spec.n, spec.m_ineq

    A1 = _sparse_draw(rng, (mi, n), spec.distribution, spec.density)
    A2 = _sparse_draw(rng, (mi, n), spec.distribution, spec.density)
    A_rand = A1 - A2

    x0 = 0.05 + 0.9 * rng.random(n)
    t = 0.5 + 0.5 * rng.random()
    x0 *= 0.9 * t / x0.sum()

    slack = 0.1 * (1.0 - rng.random(mi))  # uniform in (0, 0.1]
    b_rand = A_rand @ x0 + slack

    A_ineq = np.vstack([A_rand, np.ones((1, n))])
    b_ineq = np.concatenate([b_rand, [t]])

    if spec.m_eq > 0:
        E1 = _sparse_draw(rng, (spec.m_eq, n), spec.distribution, spec.density)
        E2 = _sparse_draw(rng, (spec.m_eq, n), spec.distribution, spec.density)
        A_eq = E1 - E2
        b_eq = A_eq @ x0
    else:
        A_eq = np.zeros((0, n))
        b_eq = np.zeros(0)

    k = max(1, (n + 3) // 4)
    Q = None
    for _ in range(50):
        L1 = _sparse_draw(rng, (2 * k, n), spec.distribution, spec.density)
        L2 = _sparse_draw(rng, (2 * k, n), spec.distribution, spec.density)
        L = L1 - L2
        Qc = 2.0 * (L[:k].T @ L[:k] - L[k:].T @ L[k:])
        Qc = 0.5 * (Qc + Qc.T)
        if np.linalg.eigvalsh(Qc)[0] < -1e-10:
            Q = Qc
            break
    if Q is None:
        # vanishing odds with any reasonable density; force indefiniteness
        lam = np.linalg.eigvalsh(Qc)[0]
        Q = Qc - (lam + 0.1) * np.eye(n)

    d = 0.02 * rng.random(n)

    name = f"qp_{spec.distribution[0]}_{spec.m_eq}_{density_token(spec.density)}_s{spec.seed}"
    inst = QpInstance(n=n, Q=Q, d=d, A_ineq=A_ineq, b_ineq=b_ineq,
                      A_eq=A_eq, b_eq=b_eq,
                      lower=np.zeros(n), upper=np.ones(n), name=name)
    return inst, x0


def generate_synthetic(spec: SyntheticSpec) -> QpInstance:
    """Deterministic random instance: indefinite Q as a difference of sparse
    Gram terms, m_ineq random rows plus one all-ones normalization row, box
    bounds 0 <= x <= 1, right-hand sides built around an interior point."""
    inst, _ = generate_synthetic_with_point(spec)
    return inst
