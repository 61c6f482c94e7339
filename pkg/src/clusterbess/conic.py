"""Solver-agnostic conic problem form: linear objective, linear rows, rotated cones.

A rotated cone ``2*u*v >= ||w||^2, u >= 0, v >= 0`` holds affine expressions
u, v, w over the variables.  Problems are assembled with ``ProblemBuilder``,
which also keeps the per-family bookkeeping used for complexity counts, and
solved by an interior-point backend.  Every reported optimum is re-checked
against the original data before it is trusted.
"""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class ConeBlock:
    """A batch of m rotated cones; each row of U/V/W plus offset is an affine form."""

    U: sp.csr_matrix
    u0: np.ndarray
    V: sp.csr_matrix
    v0: np.ndarray
    W: tuple[sp.csr_matrix, ...]
    w0: np.ndarray  # (m, p)
    tag: str

    @property
    def m(self) -> int:
        return self.U.shape[0]


@dataclass(frozen=True)
class ConicProblem:
    num_vars: int
    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    cones: tuple[ConeBlock, ...]
    lb: np.ndarray
    ub: np.ndarray
    var_tags: tuple[str, ...] = ()
    eq_tags: tuple[str, ...] = ()
    ineq_tags: tuple[str, ...] = ()
    counts: dict = field(default_factory=dict)
    aux_vars: int = 0
    layout: object = None
    var_scale: np.ndarray | None = None  # typical magnitude per variable, a conditioning hint

    def __post_init__(self):
        n = self.num_vars
        for name, M in (("A_eq", self.A_eq), ("G", self.G)):
            if M.shape[1] != n:
                raise ValueError(f"{name} has {M.shape[1]} columns for {n} variables")
        for blk in self.cones:
            for M in (blk.U, blk.V, *blk.W):
                if M.shape[1] != n:
                    raise ValueError("cone expression references an unknown variable")
        if self.c.shape != (n,) or self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("objective and bounds must have one entry per variable")

    @property
    def num_cones(self) -> int:
        return sum(b.m for b in self.cones)

    @property
    def counted_vars(self) -> int:
        return self.num_vars - self.aux_vars

    @property
    def counted_constraints(self) -> int:
        return int(sum(self.counts.values()))


class ProblemBuilder:
    """Collects variables and constraint batches in COO form."""

    def __init__(self):
        self.n = 0
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._c: list[np.ndarray] = []
        self._scale: list[np.ndarray] = []
        self.var_tags: list[str] = []
        self.aux = 0
        self._eq = _Rows()
        self._ineq = _Rows()
        self._cones: list[tuple] = []
        self.counts: dict[str, int] = {}

    def var(self, shape, tag: str, lb=-np.inf, ub=np.inf, cost=0.0, aux: bool = False, scale=1.0) -> np.ndarray:
        size = int(np.prod(shape))
        self._scale.append(np.broadcast_to(np.asarray(scale, dtype=float), shape).ravel().copy())
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (size,)).copy() if np.ndim(lb) == 0 else np.asarray(lb, float).ravel())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (size,)).copy() if np.ndim(ub) == 0 else np.asarray(ub, float).ravel())
        self._c.append(np.broadcast_to(np.asarray(cost, dtype=float), shape).ravel().copy())
        self.var_tags.extend([tag] * size)
        if aux:
            self.aux += size
        return idx

    def count(self, tag: str, k: int) -> None:
        self.counts[tag] = self.counts.get(tag, 0) + int(k)

    def eq(self, cols, coefs, rhs, tag: str, counted: int | None = None) -> None:
        """Rows sum_j coefs[r, j] * x[cols[r, j]] == rhs[r]."""
        m = self._eq.add(cols, coefs, rhs, tag)
        self.count(tag, m if counted is None else counted)

    def le(self, cols, coefs, rhs, tag: str, counted: int | None = None) -> None:
        """Rows sum_j coefs[r, j] * x[cols[r, j]] <= rhs[r]."""
        m = self._ineq.add(cols, coefs, rhs, tag)
        self.count(tag, m if counted is None else counted)

    def rcone(self, u, v, w, tag: str, counted: int | None = None) -> None:
        """Batch of 2*u*v >= w^2 cones.  u, v, w are (cols, coefs, const) triples."""
        m = len(np.atleast_1d(u[2]))
        self._cones.append((u, v, w, tag, m))
        self.count(tag, m if counted is None else counted)

    def build(self, layout=None) -> ConicProblem:
        n = self.n

        def affine(expr, m):
            cols, coefs, const = expr
            cols = np.atleast_2d(np.asarray(cols)).reshape(m, -1)
            coefs = np.asarray(coefs, dtype=float)
            if coefs.ndim == 1 and coefs.size == m and cols.shape[1] == 1:
                coefs = coefs[:, None]
            coefs = np.broadcast_to(coefs, cols.shape)
            keep = cols >= 0
            rows = np.repeat(np.arange(m), cols.shape[1]).reshape(cols.shape)
            M = sp.csr_matrix((coefs[keep], (rows[keep], cols[keep])), shape=(m, n))
            return M, np.broadcast_to(np.asarray(const, dtype=float), (m,)).copy()

        by_tag: dict[str, list] = {}
        for u, v, w, tag, m in self._cones:
            by_tag.setdefault(tag, []).append((affine(u, m), affine(v, m), affine(w, m)))
        blocks = []
        for tag, parts in by_tag.items():
            U = sp.vstack([p[0][0] for p in parts]).tocsr()
            V = sp.vstack([p[1][0] for p in parts]).tocsr()
            W = sp.vstack([p[2][0] for p in parts]).tocsr()
            cat = [np.concatenate([p[i][1] for p in parts]) for i in range(3)]
            blocks.append(ConeBlock(U, cat[0], V, cat[1], (W,), cat[2][:, None], tag))
        A, b, etags = self._eq.matrix(n)
        G, h, itags = self._ineq.matrix(n)
        return ConicProblem(
            num_vars=n,
            c=np.concatenate(self._c) if self._c else np.zeros(0),
            A_eq=A,
            b_eq=b,
            G=G,
            h=h,
            cones=tuple(blocks),
            lb=np.concatenate(self._lb) if self._lb else np.zeros(0),
            ub=np.concatenate(self._ub) if self._ub else np.zeros(0),
            var_tags=tuple(self.var_tags),
            eq_tags=tuple(etags),
            ineq_tags=tuple(itags),
            counts=dict(self.counts),
            aux_vars=self.aux,
            layout=layout,
            var_scale=np.concatenate(self._scale) if self._scale else np.zeros(0),
        )


class _Rows:
    def __init__(self):
        self.rows, self.cols, self.vals, self.rhs, self.tags = [], [], [], [], []
        self.m = 0

    def add(self, cols, coefs, rhs, tag):
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        m = len(rhs)
        cols = np.asarray(cols).reshape(m, -1)
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), cols.shape)
        keep = cols >= 0  # a negative column marks an absent term
        r = np.repeat(np.arange(self.m, self.m + m), cols.shape[1]).reshape(cols.shape)
        self.rows.append(r[keep])
        self.cols.append(cols[keep])
        self.vals.append(coefs[keep])
        self.rhs.append(rhs)
        self.tags.extend([tag] * m)
        self.m += m
        return m

    def matrix(self, n):
        if not self.rhs:
            return sp.csr_matrix((0, n)), np.zeros(0), []
        M = sp.csr_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.m, n),
        )
        return M, np.concatenate(self.rhs), self.tags


@dataclass(frozen=True)
class Residuals:
    equality: float
    inequality: float
    cone: float

    @property
    def max(self) -> float:
        return max(self.equality, self.inequality, self.cone)


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    objective: float
    status: str  # optimal | infeasible | iteration-limit | numerical-failure | inaccurate
    residuals: Residuals
    solve_time: float
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def residuals(problem: ConicProblem, x: np.ndarray) -> Residuals:
    """Relative violations: each row's error over 1 + the size of its terms."""

    def rel(M, rhs, err):
        if M.shape[0] == 0:
            return 0.0
        scale = 1.0 + np.maximum(np.abs(rhs), abs(M).dot(np.abs(x)))
        return float(np.max(err / scale))

    eq = rel(problem.A_eq, problem.b_eq, np.abs(problem.A_eq.dot(x) - problem.b_eq))
    ineq = rel(problem.G, problem.h, np.maximum(problem.G.dot(x) - problem.h, 0.0))
    lo = np.where(np.isfinite(problem.lb), problem.lb - x, 0.0)
    hi = np.where(np.isfinite(problem.ub), x - problem.ub, 0.0)
    bound = np.maximum(np.maximum(lo, hi), 0.0) / (1.0 + np.abs(x))
    ineq = max(ineq, float(bound.max()) if bound.size else 0.0)
    cone = 0.0
    for blk in problem.cones:
        u = blk.U.dot(x) + blk.u0
        v = blk.V.dot(x) + blk.v0
        w2 = sum((W.dot(x) + blk.w0[:, i]) ** 2 for i, W in enumerate(blk.W))
        w = np.sqrt(w2)
        # smallest relative move along u, v or w that restores the cone
        with np.errstate(divide="ignore", invalid="ignore"):
            fix_u = np.where(v > 0, np.maximum(w2 / (2.0 * v) - u, 0.0), np.inf) / (1.0 + np.abs(u))
            fix_v = np.where(u > 0, np.maximum(w2 / (2.0 * u) - v, 0.0), np.inf) / (1.0 + np.abs(v))
        fix_w = np.maximum(w - np.sqrt(np.maximum(2.0 * u * v, 0.0)), 0.0) / (1.0 + w)
        viol = np.minimum(np.minimum(fix_u, fix_v), fix_w)
        neg = np.maximum(np.maximum(-u, -v), 0.0) / (1.0 + np.abs(u) + np.abs(v))
        cone = max(cone, float(np.max(np.maximum(viol, neg))) if blk.m else 0.0)
    return Residuals(eq, ineq, cone)


_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
    "MaxIterations": "iteration-limit",
    "MaxTime": "iteration-limit",
}


def _scale_cols(M: sp.csr_matrix, d: np.ndarray) -> sp.csr_matrix:
    M = M.tocsr(copy=True)
    M.data *= d[M.indices]
    return M


def _scale_rows(M: sp.csr_matrix, r: np.ndarray) -> sp.csr_matrix:
    M = M.tocsr(copy=True)
    M.data *= np.repeat(r, np.diff(M.indptr))
    return M


def _row_max(M: sp.csr_matrix) -> np.ndarray:
    out = np.zeros(M.shape[0])
    nz = np.diff(M.indptr) > 0
    if M.nnz:
        out[nz] = np.maximum.reduceat(np.abs(M.data), M.indptr[:-1][nz])
    return out


def _row_normalize(M: sp.csr_matrix, rhs: np.ndarray):
    if M.shape[0] == 0:
        return M, rhs
    mx = _row_max(M)
    r = 1.0 / np.where(mx > 0, mx, 1.0)
    return _scale_rows(M, r), rhs * r


def _stack(problem: ConicProblem, d: np.ndarray):
    """Clarabel form A y + s = b, s in K, for the scaled variables y = x / d.

    Linear rows are normalized to unit max coefficient.  Each cone gets u and
    v multiplied by alpha and beta and w by sqrt(alpha*beta), which maps the
    rotated cone onto itself.
    """
    n = problem.num_vars
    blocks, rhs, cones = [], [], []
    if problem.A_eq.shape[0]:
        M, r = _row_normalize(_scale_cols(problem.A_eq, d), problem.b_eq)
        blocks.append(M)
        rhs.append(r)
        cones.append(clarabel.ZeroConeT(M.shape[0]))
    lin, lin_rhs = [], []
    if problem.G.shape[0]:
        M, r = _row_normalize(_scale_cols(problem.G, d), problem.h)
        lin.append(M)
        lin_rhs.append(r)
    fin_lo = np.flatnonzero(np.isfinite(problem.lb))
    if fin_lo.size:
        lin.append(sp.csr_matrix((-np.ones(fin_lo.size), (np.arange(fin_lo.size), fin_lo)), shape=(fin_lo.size, n)))
        lin_rhs.append(-problem.lb[fin_lo] / d[fin_lo])
    fin_hi = np.flatnonzero(np.isfinite(problem.ub))
    if fin_hi.size:
        lin.append(sp.csr_matrix((np.ones(fin_hi.size), (np.arange(fin_hi.size), fin_hi)), shape=(fin_hi.size, n)))
        lin_rhs.append(problem.ub[fin_hi] / d[fin_hi])
    if lin:
        L = sp.vstack(lin)
        blocks.append(L)
        rhs.append(np.concatenate(lin_rhs))
        cones.append(clarabel.NonnegativeConeT(L.shape[0]))
    r2 = np.sqrt(2.0)

    def mag(M, c0):
        mx = np.maximum(_row_max(M), np.abs(c0))
        return 1.0 / np.where(mx > 0, mx, 1.0)

    for blk in problem.cones:
        p = len(blk.W)
        U, V = _scale_cols(blk.U, d), _scale_cols(blk.V, d)
        Ws = [_scale_cols(W, d) for W in blk.W]
        alpha, beta = mag(U, blk.u0), mag(V, blk.v0)
        gamma = np.sqrt(alpha * beta)
        U, u0 = _scale_rows(U, alpha), alpha * blk.u0
        V, v0 = _scale_rows(V, beta), beta * blk.v0
        # s = (u + v, u - v, sqrt2 * w) interleaved per cone; s = b - A y
        rows = [U + V, U - V] + [_scale_rows(W, r2 * gamma) for W in Ws]
        consts = [u0 + v0, u0 - v0] + [r2 * gamma * blk.w0[:, i] for i in range(p)]
        dim = 2 + p
        M = sp.vstack(rows).tocsr()
        order = np.arange(dim * blk.m).reshape(dim, blk.m).T.ravel()
        blocks.append(-M[order])
        rhs.append(np.concatenate(consts)[order])
        cones.extend(clarabel.SecondOrderConeT(dim) for _ in range(blk.m))
    A = sp.vstack(blocks).tocsc() if blocks else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return A, b, cones


def solve(problem: ConicProblem, tol: float = DEFAULT_TOL, max_iter: int = 200) -> Solution:
    """Solve and certify.  A reported optimum whose residuals exceed ``tol`` is
    returned with status ``inaccurate`` instead of ``optimal``."""
    n = problem.num_vars
    d = problem.var_scale if problem.var_scale is not None and problem.var_scale.size == n else np.ones(n)
    d = np.where(d > 0, d, 1.0)
    A, b, cones = _stack(problem, d)
    q = problem.c * d
    q_scale = float(np.max(np.abs(q))) if q.size and np.any(q) else 1.0
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.max_threads = 1
    settings.tol_feas = min(1e-8, tol * 1e-2)
    settings.tol_gap_abs = min(1e-8, tol * 1e-2)
    settings.tol_gap_rel = min(1e-8, tol * 1e-2)
    start = time.perf_counter()
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), q / q_scale, A, b, cones, settings)
    raw = solver.solve()
    elapsed = time.perf_counter() - start
    x = np.asarray(raw.x, dtype=float) * d
    status = _STATUS.get(str(raw.status), "numerical-failure")
    res = residuals(problem, x) if x.size == n and np.all(np.isfinite(x)) else Residuals(np.inf, np.inf, np.inf)
    if status == "optimal" and res.max > tol:
        status = "inaccurate"
    return Solution(x, float(problem.c.dot(x)) if x.size == n else np.nan, status, res, elapsed, int(raw.iterations))


def dump(problem: ConicProblem) -> str:
    """Line-oriented text form, one variable or constraint per line."""
    out = io.StringIO()
    fmt = "{:.17g}".format
    out.write(f"vars {problem.num_vars}\n")
    for i in range(problem.num_vars):
        tag = problem.var_tags[i] if problem.var_tags else ""
        out.write(f"var {i} {tag} lb={fmt(problem.lb[i])} ub={fmt(problem.ub[i])} c={fmt(problem.c[i])}\n")

    def terms(row):
        return " ".join(f"{fmt(v)}*x{j}" for j, v in zip(row.indices, row.data)) or "0"

    for kind, M, rhs, tags, op in (
        ("eq", problem.A_eq, problem.b_eq, problem.eq_tags, "="),
        ("le", problem.G, problem.h, problem.ineq_tags, "<="),
    ):
        for r in range(M.shape[0]):
            tag = tags[r] if tags else ""
            out.write(f"{kind} {tag} {terms(M.getrow(r))} {op} {fmt(rhs[r])}\n")
    for blk in problem.cones:
        for r in range(blk.m):
            w = " ; ".join(f"{terms(W.getrow(r))} + {fmt(blk.w0[r, i])}" for i, W in enumerate(blk.W))
            out.write(
                f"rcone {blk.tag} u: {terms(blk.U.getrow(r))} + {fmt(blk.u0[r])} "
                f"v: {terms(blk.V.getrow(r))} + {fmt(blk.v0[r])} w: {w}\n"
            )
    return out.getvalue()
