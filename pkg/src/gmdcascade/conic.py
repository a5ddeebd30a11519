"""Solver-agnostic conic programs and a bundled first-order reference solver.

A :class:`ConicProgram` is a linear objective to minimize over variables
with optional box bounds, subject to linear equalities, linear
inequalities, second-order-cone constraints ||F x + g|| <= c'x + d and
rotated-cone constraints u*v >= ||w||^2 (u, v >= 0, each an affine
expression).

The bundled solver embeds the program in the homogeneous self-dual form
and runs operator splitting: each iteration alternates a linear solve
against the (I + Q) system (factorized once) with a projection onto the
cone product.  Infeasibility and unboundedness surface as certificate
rays of the embedding.  Ruiz equilibration tames badly scaled data, and
pure-LP solutions are polished by re-solving the active set, so small
linear programs come back at near machine precision.

The solver is adequate at desk scale; anything bigger should go through
the same ConicProgram/ConicSolution contract to an industrial solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOL = 1e-6
MAX_ITERATIONS = 50_000


class ConicError(Exception):
    """Malformed program or misuse of the builder API."""


class ConicStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


LinExpr = tuple[dict[int, float], float]  # (coefficients by variable, constant)


def _clean_coeffs(coeffs: Mapping[int, float], nvar: int, where: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for j, a in coeffs.items():
        j = int(j)
        if not 0 <= j < nvar:
            raise ConicError(f"{where}: unknown variable index {j}")
        a = float(a)
        if a != 0.0:
            out[j] = a
    return out


@dataclass(frozen=True)
class _SocConstraint:
    vec: tuple[LinExpr, ...]  # the norm argument
    bound: LinExpr  # right-hand side c'x + d


@dataclass(frozen=True)
class _RotatedConstraint:
    u: LinExpr
    v: LinExpr
    w: tuple[LinExpr, ...]


class ConicProgram:
    """Incrementally built conic program (minimize a linear objective).

    Constraint ids are assigned in call order across all constraint kinds
    and stay stable.  The program freezes on first solve.
    """

    def __init__(self):
        self._nvar = 0
        self._lb: list[Optional[float]] = []
        self._ub: list[Optional[float]] = []
        self._obj: dict[int, float] = {}
        self._eq: list[tuple[dict[int, float], float]] = []
        self._ineq: list[tuple[dict[int, float], float]] = []
        self._soc: list[_SocConstraint] = []
        self._rot: list[_RotatedConstraint] = []
        self._order: list[tuple[str, int]] = []  # constraint id -> (kind, local index)
        self._frozen = False

    # -- variables -----------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return self._nvar

    @property
    def num_constraints(self) -> int:
        return len(self._order)

    def _check_mutable(self):
        if self._frozen:
            raise ConicError("program is frozen once handed to solve()")

    def add_var(self, lb: Optional[float] = None, ub: Optional[float] = None) -> int:
        self._check_mutable()
        if lb is not None and ub is not None and lb > ub:
            raise ConicError(f"variable bounds reversed: [{lb}, {ub}]")
        self._lb.append(None if lb is None else float(lb))
        self._ub.append(None if ub is None else float(ub))
        self._nvar += 1
        return self._nvar - 1

    def add_vars(self, count: int, lb: Optional[float] = None, ub: Optional[float] = None) -> list[int]:
        return [self.add_var(lb, ub) for _ in range(count)]

    def set_bounds(self, var: int, lb: Optional[float] = None, ub: Optional[float] = None) -> None:
        self._check_mutable()
        if not 0 <= var < self._nvar:
            raise ConicError(f"unknown variable index {var}")
        if lb is not None and ub is not None and lb > ub:
            raise ConicError(f"variable bounds reversed: [{lb}, {ub}]")
        self._lb[var] = None if lb is None else float(lb)
        self._ub[var] = None if ub is None else float(ub)

    # -- objective -----------------------------------------------------------

    def set_objective(self, coeffs: Mapping[int, float]) -> None:
        self._check_mutable()
        self._obj = _clean_coeffs(coeffs, self._nvar, "objective")

    def add_objective_term(self, var: int, coeff: float) -> None:
        self._check_mutable()
        if not 0 <= var < self._nvar:
            raise ConicError(f"unknown variable index {var}")
        self._obj[var] = self._obj.get(var, 0.0) + float(coeff)

    # -- constraints ----------------------------------------------------------

    def _register(self, kind: str, local: int) -> int:
        self._order.append((kind, local))
        return len(self._order) - 1

    def add_equality(self, coeffs: Mapping[int, float], rhs: float) -> int:
        """a'x == rhs"""
        self._check_mutable()
        self._eq.append((_clean_coeffs(coeffs, self._nvar, "equality"), float(rhs)))
        return self._register("eq", len(self._eq) - 1)

    def add_inequality(self, coeffs: Mapping[int, float], rhs: float) -> int:
        """a'x <= rhs"""
        self._check_mutable()
        self._ineq.append((_clean_coeffs(coeffs, self._nvar, "inequality"), float(rhs)))
        return self._register("ineq", len(self._ineq) - 1)

    def _expr(self, expr, where: str) -> LinExpr:
        coeffs, const = expr
        return (_clean_coeffs(coeffs, self._nvar, where), float(const))

    def add_soc(self, vec: Sequence, bound) -> int:
        """|| (vec_1, ..., vec_k) ||_2 <= bound, each entry affine."""
        self._check_mutable()
        if len(vec) < 1:
            raise ConicError("second-order cone needs at least one norm entry")
        con = _SocConstraint(
            vec=tuple(self._expr(e, "soc") for e in vec),
            bound=self._expr(bound, "soc"),
        )
        self._soc.append(con)
        return self._register("soc", len(self._soc) - 1)

    def add_rotated_soc(self, u, v, w: Sequence) -> int:
        """u * v >= ||w||^2 with u, v >= 0, all entries affine."""
        self._check_mutable()
        if len(w) < 1:
            raise ConicError("rotated cone needs at least one squared entry")
        con = _RotatedConstraint(
            u=self._expr(u, "rotated"),
            v=self._expr(v, "rotated"),
            w=tuple(self._expr(e, "rotated") for e in w),
        )
        self._rot.append(con)
        return self._register("rot", len(self._rot) - 1)

    # -- evaluation helpers ----------------------------------------------------

    def objective_value(self, x: np.ndarray) -> float:
        return float(sum(a * x[j] for j, a in self._obj.items()))

    def dump_triplets(self) -> str:
        """Sparse triplet text dump of the compiled data (debug aid)."""
        A, bvec, cvec, dims = _compile(self)
        coo = A.tocoo()
        lines = [
            f"# m {A.shape[0]} n {A.shape[1]} zero {dims.zero} nonneg {dims.nonneg} "
            f"soc {' '.join(str(d) for d in dims.soc)}"
        ]
        lines += [f"A {i} {j} {v!r}" for i, j, v in zip(coo.row, coo.col, coo.data)]
        lines += [f"b {i} {v!r}" for i, v in enumerate(bvec) if v != 0.0]
        lines += [f"c {j} {v!r}" for j, v in enumerate(cvec) if v != 0.0]
        return "\n".join(lines) + "\n"


@dataclass
class ConicSolution:
    status: ConicStatus
    x: np.ndarray
    objective: float
    max_primal_residual: float
    max_cone_violation: float
    iterations: int
    residuals: tuple[float, float, float]  # (primal, dual, gap), relative


@dataclass(frozen=True)
class AuditReport:
    """Constraint-by-constraint violation summary, solver-independent."""

    max_equality: float
    max_inequality: float
    max_cone: float
    max_bound: float

    @property
    def overall(self) -> float:
        return max(self.max_equality, self.max_inequality, self.max_cone, self.max_bound)


def _eval_expr(expr: LinExpr, x: np.ndarray) -> float:
    coeffs, const = expr
    return const + sum(a * x[j] for j, a in coeffs.items())


def audit(prog: ConicProgram, x: np.ndarray) -> AuditReport:
    """Measure how far ``x`` is from satisfying every constraint.

    Works straight off the high-level constraint list, independent of the
    solver's compiled form.
    """
    x = np.asarray(x, dtype=float)
    max_eq = 0.0
    for coeffs, rhs in prog._eq:
        max_eq = max(max_eq, abs(_eval_expr((coeffs, 0.0), x) - rhs))
    max_in = 0.0
    for coeffs, rhs in prog._ineq:
        max_in = max(max_in, _eval_expr((coeffs, 0.0), x) - rhs)
    max_cone = 0.0
    for con in prog._soc:
        norm = math.hypot(*(_eval_expr(e, x) for e in con.vec))
        max_cone = max(max_cone, norm - _eval_expr(con.bound, x))
    for con in prog._rot:
        u = _eval_expr(con.u, x)
        v = _eval_expr(con.v, x)
        w2 = sum(_eval_expr(e, x) ** 2 for e in con.w)
        max_cone = max(max_cone, w2 - u * v, -u, -v)
    max_bound = 0.0
    for j in range(prog._nvar):
        if prog._lb[j] is not None:
            max_bound = max(max_bound, prog._lb[j] - x[j])
        if prog._ub[j] is not None:
            max_bound = max(max_bound, x[j] - prog._ub[j])
    return AuditReport(max_eq, max(max_in, 0.0), max(max_cone, 0.0), max(max_bound, 0.0))


# ---------------------------------------------------------------------------
# Compilation to  A x + s = b,  s in {0}^zero x R+^nonneg x SOC(d1) x ...
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ConeDims:
    zero: int
    nonneg: int
    soc: tuple[int, ...]

    @property
    def total(self) -> int:
        return self.zero + self.nonneg + sum(self.soc)


def _compile(prog: ConicProgram):
    n = prog._nvar
    rows: list[dict[int, float]] = []
    rhs: list[float] = []

    for coeffs, b in prog._eq:
        rows.append(coeffs)
        rhs.append(b)
    zero = len(rows)

    for coeffs, b in prog._ineq:
        rows.append(coeffs)
        rhs.append(b)
    for j in range(n):
        if prog._lb[j] is not None:
            rows.append({j: -1.0})
            rhs.append(-prog._lb[j])
        if prog._ub[j] is not None:
            rows.append({j: 1.0})
            rhs.append(prog._ub[j])
    nonneg = len(rows) - zero

    soc_dims: list[int] = []

    def push_soc(bound: LinExpr, vec: Sequence[LinExpr]):
        bc, bd = bound
        rows.append({j: -a for j, a in bc.items()})
        rhs.append(bd)
        for coeffs, const in vec:
            rows.append({j: -a for j, a in coeffs.items()})
            rhs.append(const)
        soc_dims.append(1 + len(vec))

    for con in prog._soc:
        push_soc(con.bound, con.vec)
    for con in prog._rot:
        (uc, ud), (vc, vd) = con.u, con.v
        plus = dict(uc)
        for j, a in vc.items():
            plus[j] = plus.get(j, 0.0) + a
        minus = dict(uc)
        for j, a in vc.items():
            minus[j] = minus.get(j, 0.0) - a
        doubled = tuple(({j: 2.0 * a for j, a in c.items()}, 2.0 * d) for c, d in con.w)
        push_soc((plus, ud + vd), [(minus, ud - vd), *doubled])

    m = len(rows)
    data, ri, ci = [], [], []
    for i, coeffs in enumerate(rows):
        for j, a in coeffs.items():
            ri.append(i)
            ci.append(j)
            data.append(a)
    A = sp.csc_matrix((data, (ri, ci)), shape=(m, n))
    b = np.asarray(rhs, dtype=float)
    c = np.zeros(n)
    for j, a in prog._obj.items():
        c[j] = a
    return A, b, c, _ConeDims(zero, nonneg, tuple(soc_dims))


# ---------------------------------------------------------------------------
# Cone projections
# ---------------------------------------------------------------------------


def _project_soc_block(z: np.ndarray) -> np.ndarray:
    t, w = z[0], z[1:]
    nw = np.linalg.norm(w)
    if nw <= t:
        return z
    if nw <= -t:
        return np.zeros_like(z)
    a = 0.5 * (t + nw)
    out = np.empty_like(z)
    out[0] = a
    out[1:] = (a / nw) * w
    return out


def _project_dual_cone(y: np.ndarray, dims: _ConeDims) -> np.ndarray:
    """Project onto K* = R^zero x R+^nonneg x SOC x ... (in place copy)."""
    out = y.copy()
    i = dims.zero  # dual of the zero cone is free
    j = i + dims.nonneg
    np.maximum(out[i:j], 0.0, out=out[i:j])
    for d in dims.soc:
        out[j : j + d] = _project_soc_block(out[j : j + d])
        j += d
    return out


class _GroupedSocProjector:
    """Vectorized SOC projection over blocks grouped by dimension."""

    def __init__(self, dims: _ConeDims):
        starts: dict[int, list[int]] = {}
        j = dims.zero + dims.nonneg
        for d in dims.soc:
            starts.setdefault(d, []).append(j)
            j += d
        self.groups = [
            (np.asarray(ss, dtype=int), d) for d, ss in sorted(starts.items())
        ]

    def project(self, y: np.ndarray) -> None:
        """In-place SOC projection of every block inside y."""
        for ss, d in self.groups:
            t = y[ss]
            idx = ss[:, None] + np.arange(1, d)[None, :]
            w = y[idx]
            nw = np.linalg.norm(w, axis=1)
            inside = nw <= t
            zero = nw <= -t
            boundary = ~(inside | zero)
            a = 0.5 * (t + nw)
            t_new = np.where(inside, t, np.where(zero, 0.0, a))
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(boundary & (nw > 0), a / np.where(nw > 0, nw, 1.0), 1.0)
            scale = np.where(zero, 0.0, scale)
            y[ss] = t_new
            y[idx] = w * scale[:, None]


def _project_primal_cone(s: np.ndarray, dims: _ConeDims) -> np.ndarray:
    out = s.copy()
    out[: dims.zero] = 0.0
    i = dims.zero
    j = i + dims.nonneg
    np.maximum(out[i:j], 0.0, out=out[i:j])
    for d in dims.soc:
        out[j : j + d] = _project_soc_block(out[j : j + d])
        j += d
    return out


# ---------------------------------------------------------------------------
# Ruiz equilibration
# ---------------------------------------------------------------------------


def _row_groups(dims: _ConeDims) -> list[tuple[int, int]]:
    """Row index ranges that must share a scaling factor (SOC blocks)."""
    groups = [(i, i + 1) for i in range(dims.zero + dims.nonneg)]
    j = dims.zero + dims.nonneg
    for d in dims.soc:
        groups.append((j, j + d))
        j += d
    return groups


def _equilibrate(A: sp.csc_matrix, b: np.ndarray, c: np.ndarray, dims: _ConeDims, iters: int = 10):
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    groups = _row_groups(dims)
    work = A.copy().tocsr()
    def inv_sqrt(norms: np.ndarray) -> np.ndarray:
        out = np.ones_like(norms)
        mask = norms > 0
        out[mask] = 1.0 / np.sqrt(norms[mask])
        return out

    for _ in range(iters):
        rnorm = np.zeros(m)
        absw = abs(work)
        row_max = absw.max(axis=1).toarray().ravel() if m else np.zeros(0)
        for lo, hi in groups:
            g = row_max[lo:hi].max() if hi > lo else 0.0
            rnorm[lo:hi] = g
        rs = inv_sqrt(rnorm)
        col_max = absw.max(axis=0).toarray().ravel() if n else np.zeros(0)
        cs = inv_sqrt(col_max)
        work = sp.diags(rs) @ work @ sp.diags(cs)
        d *= rs
        e *= cs
    b_s = d * b
    c_s = e * c
    sigma = 1.0 / (1.0 + np.linalg.norm(b_s))
    rho = 1.0 / (1.0 + np.linalg.norm(c_s))
    return work.tocsc(), b_s * sigma, c_s * rho, d, e, sigma, rho


# ---------------------------------------------------------------------------
# Homogeneous self-dual operator splitting
# ---------------------------------------------------------------------------


@dataclass
class _RawResult:
    status: ConicStatus
    x: np.ndarray
    iterations: int
    pres: float
    dres: float
    gap: float
    y: np.ndarray | None = None
    s: np.ndarray | None = None


class _HsdeLinearMap:
    """Solves (I + Q) z = w by block elimination against I + A'A.

    Factoring the n-by-n positive-definite reduced system instead of the
    full (n+m+1) skew matrix keeps per-iteration solves cheap when the
    cone dimension m dominates.
    """

    def __init__(self, A: sp.csc_matrix, b: np.ndarray, c: np.ndarray):
        self.A = A.tocsr()
        self.b = b
        self.c = c
        n = A.shape[1]
        M = (sp.identity(n, format="csc") + (A.T @ A).tocsc()).tocsc()
        self.M_lu = spla.splu(M)
        self.h = c - self.A.T @ b
        self.p = self.M_lu.solve(self.h)
        self.g = c + self.A.T @ b
        self.denom = 1.0 + float(b @ b) + float(self.g @ self.p)

    def solve(self, w: np.ndarray) -> np.ndarray:
        n = self.A.shape[1]
        m = self.A.shape[0]
        w1, w2, w3 = w[:n], w[n : n + m], w[-1]
        q = self.M_lu.solve(w1 - self.A.T @ w2)
        z3 = (w3 + float(self.b @ w2) + float(self.g @ q)) / self.denom
        z1 = q - self.p * z3
        z2 = w2 + self.A @ z1 - self.b * z3
        out = np.empty_like(w)
        out[:n] = z1
        out[n : n + m] = z2
        out[-1] = z3
        return out


class _Embedding:
    """Operator-splitting iteration on the homogeneous self-dual embedding.

    Keeps (u, v) across calls so the solve can proceed in chunks with
    polish attempts in between.
    """

    def __init__(self, A0, b0, c0, dims: _ConeDims, tol: float, relax: float = 1.5,
                 check_every: int = 25):
        self.dims = dims
        self.tol = tol
        self.relax = relax
        self.check_every = check_every
        self.m, self.n = A0.shape
        self.A0 = A0.tocsr()
        self.b0 = b0
        self.c0 = c0
        self.norm_b0 = np.linalg.norm(b0)
        self.norm_c0 = np.linalg.norm(c0)
        A, b, c, self.dscale, self.escale, self.sigma, self.rho = _equilibrate(
            A0, b0, c0, dims
        )
        self.lin = _HsdeLinearMap(A, b, c)
        self.soc = _GroupedSocProjector(dims)
        self.u = np.zeros(self.n + self.m + 1)
        self.u[-1] = 1.0
        self.v = np.zeros(self.n + self.m + 1)
        self.iterations = 0
        self.best = _RawResult(
            ConicStatus.NUMERICAL_FAILURE, np.zeros(self.n), 0, np.inf, np.inf, np.inf
        )

    def _unscale(self):
        n, m = self.n, self.m
        x = self.escale * self.u[:n] / self.sigma
        y = self.dscale * self.u[n : n + m] / self.rho
        s = self.v[n : n + m] / (self.dscale * self.sigma)
        return x, y, s

    def _project_u(self, w: np.ndarray) -> np.ndarray:
        """Projection onto C = R^n x K* x R+, in place on a copy of w."""
        n, m = self.n, self.m
        out = w.copy()
        lo = n + self.dims.zero  # dual of the zero cone is free
        hi = n + self.dims.zero + self.dims.nonneg
        np.maximum(out[lo:hi], 0.0, out=out[lo:hi])
        yview = out[n : n + m]
        self.soc.project(yview)
        out[-1] = max(out[-1], 0.0)
        return out

    def run(self, iters: int) -> _RawResult:
        """Advance up to ``iters`` iterations; return early on a verdict."""
        n, m = self.n, self.m
        for _ in range(iters):
            self.iterations += 1
            ut = self.lin.solve(self.u + self.v)
            ut = self.relax * ut + (1.0 - self.relax) * self.u
            un = self._project_u(ut - self.v)
            self.v = self.v - ut + un
            self.u = un

            if self.iterations % self.check_every != 0:
                continue

            # tau is scale-free in the embedding; dividing the unscaled
            # rays by it yields the candidate solution in original units
            tau = self.u[-1]
            xr, yr, sr = self._unscale()
            if tau > 1e-12:
                xc, yc, sc = xr / tau, yr / tau, sr / tau
                pres = np.linalg.norm(self.A0 @ xc + sc - self.b0) / (1.0 + self.norm_b0)
                dres = np.linalg.norm(self.A0.T @ yc + self.c0) / (1.0 + self.norm_c0)
                pobj = float(self.c0 @ xc)
                dobj = float(-self.b0 @ yc)
                gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
                if pres < self.best.pres:
                    self.best = _RawResult(
                        ConicStatus.NUMERICAL_FAILURE, xc, self.iterations,
                        pres, dres, gap, yc, sc,
                    )
                if pres <= self.tol and dres <= self.tol and gap <= self.tol:
                    return _RawResult(
                        ConicStatus.OPTIMAL, xc, self.iterations, pres, dres, gap, yc, sc
                    )

            bty = float(self.b0 @ yr)
            if bty < 0 and self.norm_b0 > 0:
                if np.linalg.norm(self.A0.T @ yr) * self.norm_b0 <= self.tol * (-bty):
                    return _RawResult(
                        ConicStatus.INFEASIBLE, np.zeros(n), self.iterations, np.inf, 0.0, 0.0
                    )
            ctx = float(self.c0 @ xr)
            if ctx < 0 and self.norm_c0 > 0:
                if np.linalg.norm(self.A0 @ xr + sr) * self.norm_c0 <= self.tol * (-ctx):
                    return _RawResult(
                        ConicStatus.UNBOUNDED, xr / (-ctx), self.iterations, 0.0, np.inf, 0.0
                    )
        return self.best


# ---------------------------------------------------------------------------
# Active-set KKT polish.  Treat the near-active constraints of the first-
# order solution as exact equalities (cone boundaries enter through their
# smooth scalarization ||w(x)|| - t(x) = 0) and run Newton on the resulting
# KKT system.  A polished point that passes feasibility, stationarity and
# multiplier-sign checks is a genuine optimality certificate, which both
# sharpens solutions to near machine precision and rescues the slow
# first-order tail on degenerate programs.
# ---------------------------------------------------------------------------


@dataclass
class _PolishResult:
    x: np.ndarray
    feasibility: float
    stationarity: float
    accepted: bool


def _soc_blocks(dims: _ConeDims) -> list[tuple[int, int]]:
    blocks = []
    j = dims.zero + dims.nonneg
    for d in dims.soc:
        blocks.append((j, d))
        j += d
    return blocks


class _ConeGeometry:
    """Support-local dense view of one active cone's rows of A.

    Gradient and curvature of ||w(x)|| - t(x) live entirely on the columns
    the cone's rows touch, so each Newton pass only does a handful of
    small dense products per cone.
    """

    def __init__(self, A_csr, start: int, d: int):
        indptr, indices, data = A_csr.indptr, A_csr.indices, A_csr.data
        cols = [indices[indptr[r]: indptr[r + 1]] for r in range(start, start + d)]
        self.start = start
        self.d = d
        self.w_rows = np.arange(start + 1, start + d)
        self.support = np.unique(np.concatenate(cols)) if cols else np.zeros(0, int)
        s = self.support.size
        self.t_vec = np.zeros(s)
        tcols = indices[indptr[start]: indptr[start + 1]]
        tvals = data[indptr[start]: indptr[start + 1]]
        self.t_vec[np.searchsorted(self.support, tcols)] = tvals
        self.W = np.zeros((d - 1, s))
        for i, r in enumerate(range(start + 1, start + d)):
            rc = indices[indptr[r]: indptr[r + 1]]
            rv = data[indptr[r]: indptr[r + 1]]
            self.W[i, np.searchsorted(self.support, rc)] = rv

    def evaluate(self, s_now, lam_j: float):
        """(gradient values on support, h residual, local Hessian or None)."""
        w = s_now[self.w_rows]
        wn = float(np.linalg.norm(w))
        if wn <= 1e-14:
            return None
        wbar = w / wn
        grad = self.t_vec - wbar @ self.W
        h = wn - s_now[self.start]
        hess_local = None
        if lam_j > 0:
            proj = self.W - np.outer(wbar, wbar @ self.W)
            hess_local = (lam_j / wn) * (self.W.T @ proj)
        return grad, h, hess_local


def _newton_on_active_set(A_csr, b, c, n, act_rows, act_cones, x0, lam0,
                          newton_iters: int = 6):
    """Damped minimum-norm Newton on the KKT system of a fixed active set.

    Cone rows enter through their smooth scalarization ||w(x)|| - t(x) = 0
    with exact curvature.  Returns (x, lam, stationarity_residual) or None
    when the iteration cannot make progress.
    """
    A_act = A_csr[act_rows]
    b_act = b[act_rows]
    x = x0.copy()
    lam = lam0.copy()
    k = len(act_rows) + len(act_cones)
    geom = [_ConeGeometry(A_csr, start, d) for start, d in act_cones]

    lin_coo = A_act.tocoo()
    lin_rows, lin_cols, lin_vals = lin_coo.row, lin_coo.col, lin_coo.data
    cone_row_ids = [len(act_rows) + i for i in range(len(act_cones))]

    def assemble(x, lam):
        s_now = b - A_csr @ x
        rows = [lin_rows]
        cols = [lin_cols]
        vals = [lin_vals]
        h_cone = np.empty(len(geom))
        hess_triplets = []
        for i, gm in enumerate(geom):
            out = gm.evaluate(s_now, float(lam[len(act_rows) + i]))
            if out is None:
                return None
            grad, h_i, hess_local = out
            rows.append(np.full(gm.support.size, cone_row_ids[i]))
            cols.append(gm.support)
            vals.append(grad)
            h_cone[i] = h_i
            if hess_local is not None:
                rr, cc = np.meshgrid(gm.support, gm.support, indexing="ij")
                hess_triplets.append((rr.ravel(), cc.ravel(), hess_local.ravel()))
        J = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(k, n),
        )
        h = np.concatenate([np.asarray(A_act @ x - b_act).ravel(), h_cone])
        if hess_triplets:
            hr = np.concatenate([t[0] for t in hess_triplets])
            hc = np.concatenate([t[1] for t in hess_triplets])
            hv = np.concatenate([t[2] for t in hess_triplets])
            hess = sp.csc_matrix((hv, (hr, hc)), shape=(n, n))
        else:
            hess = sp.csc_matrix((n, n))
        return J, h, c + J.T @ lam, hess

    def merit(h, r_stat) -> float:
        return float(np.linalg.norm(np.concatenate([h, r_stat])))

    def gram_solve(J, rhs):
        """Solve (J J' + eps I) z = rhs; None when the factorization fails."""
        G = (J @ J.T).tocsc() + 1e-10 * sp.identity(k, format="csc")
        try:
            return spla.splu(G).solve(rhs)
        except RuntimeError:
            return None

    # Stage A: minimum-norm feasibility projection onto the active manifold.
    # Purely primal, so it cannot slide away along the objective.
    state = assemble(x, lam)
    if state is None:
        return None
    for _ in range(4):
        J, h, r_stat, _ = state
        hn = float(np.linalg.norm(h))
        if hn < 1e-12:
            break
        z = gram_solve(J, h)
        if z is None:
            return None
        dx = -(J.T @ z)
        step = 1.0
        for _ in range(4):
            state_new = assemble(x + step * dx, lam)
            if state_new is not None and float(np.linalg.norm(state_new[1])) < hn:
                x = x + step * dx
                state = state_new
                break
            step *= 0.5
        else:
            break

    # Stage B: least-squares multipliers for the projected point.
    J, h, r_stat, _ = state
    z = gram_solve(J, J @ c)
    if z is None:
        return None
    lam = -z
    state = assemble(x, lam)
    if state is None:
        return None

    # Stage C: short joint Newton to tighten both residual blocks.
    for _ in range(newton_iters):
        J, h, r_stat, hess = state
        base = merit(h, r_stat)
        if base < 1e-13 * (1.0 + np.linalg.norm(c)):
            break
        rhs = -np.concatenate([r_stat, h])
        if n + k <= 1500:
            kkt = sp.bmat([[hess, J.T], [J, None]], format="csr")
            delta, *_ = np.linalg.lstsq(kkt.toarray(), rhs, rcond=None)
        else:
            eps = 1e-9
            kkt = sp.bmat(
                [[hess + eps * sp.identity(n), J.T], [J, -eps * sp.identity(k)]],
                format="csc",
            )
            try:
                delta = spla.splu(kkt).solve(rhs)
            except RuntimeError:
                return None
        if not np.all(np.isfinite(delta)):
            return None
        step = 1.0
        for _ in range(5):
            x_new = x + step * delta[:n]
            lam_new = lam + step * delta[n:]
            state_new = assemble(x_new, lam_new)
            if state_new is not None and merit(state_new[1], state_new[2]) < base:
                x, lam, state = x_new, lam_new, state_new
                break
            step *= 0.5
        else:
            break  # no improving step; settle for the current point
    return x, lam, state[2]


def _try_polish(prog, A, b, c, dims: _ConeDims, raw: _RawResult, tol: float,
                thr: float) -> Optional[_PolishResult]:
    if raw.y is None:
        return None
    m, n = A.shape
    A_csr = A.tocsr()
    y = raw.y
    slack = b - A_csr @ raw.x
    bscale = 1.0 + np.abs(b)
    yscale = 1.0 + float(np.abs(y).max(initial=0.0))
    feas_tol = tol * (1.0 + float(np.abs(b).max(initial=0.0)))
    n_eq = dims.zero

    act_rows = list(range(dims.zero))
    for i in range(dims.zero, dims.zero + dims.nonneg):
        if slack[i] <= thr * bscale[i] or y[i] >= thr * yscale:
            act_rows.append(i)
    act_cones = []
    inactive_cones = []
    for start, d in _soc_blocks(dims):
        t = slack[start]
        wn = float(np.linalg.norm(slack[start + 1 : start + d]))
        if wn > 1e-12 and (t - wn <= thr * (1.0 + abs(t)) or y[start] >= thr * yscale):
            act_cones.append((start, d))
        else:
            inactive_cones.append((start, d))

    if not act_rows and not act_cones:
        return None
    lam = np.array(
        [y[i] if i < n_eq else max(y[i], 0.0) for i in act_rows]
        + [max(y[start], 0.0) for start, _ in act_cones]
    )
    x = raw.x

    # Active-set correction dance: Newton can slide along a flat optimal
    # face into constraints that were inactive at the first-order point
    # (add those), and an overshoot can pin constraints that are slack at
    # the optimum, leaving an inconsistent system (drop actives whose
    # multipliers turn negative).
    big = n + len(act_rows) + len(act_cones) > 1500
    rounds, newton_iters = (4, 4) if big else (10, 6)
    result = None
    drop_tol = 1e-7 * yscale
    for _ in range(rounds):
        out = _newton_on_active_set(
            A_csr, b, c, n, act_rows, act_cones, x, lam, newton_iters=newton_iters
        )
        if out is None:
            return None
        x, lam, r_stat = out
        s_now = b - A_csr @ x

        keep_rows = [
            (i, lam[idx])
            for idx, i in enumerate(act_rows)
            if i < n_eq or lam[idx] >= -drop_tol
        ]
        keep_cones = [
            (bc, lam[len(act_rows) + idx])
            for idx, bc in enumerate(act_cones)
            if lam[len(act_rows) + idx] >= -drop_tol
        ]
        dropped = (len(keep_rows) + len(keep_cones)) < (len(act_rows) + len(act_cones))

        new_rows = [
            i
            for i in range(dims.zero, dims.zero + dims.nonneg)
            if i not in act_rows and s_now[i] < -0.1 * feas_tol
        ]
        new_cones = []
        for start, d in list(inactive_cones):
            wn = float(np.linalg.norm(s_now[start + 1 : start + d]))
            if wn > 1e-12 and wn - s_now[start] > 0.1 * feas_tol:
                new_cones.append((start, d))

        result = (x, lam, r_stat)
        if not new_rows and not new_cones and not dropped:
            break

        act_rows = [i for i, _ in keep_rows] + new_rows
        act_cones = [bc for bc, _ in keep_cones] + new_cones
        inactive_cones = [
            bc
            for bc in _soc_blocks(dims)
            if bc not in act_cones
        ]
        lam = np.array(
            [l for _, l in keep_rows]
            + [0.0] * len(new_rows)
            + [l for _, l in keep_cones]
            + [0.0] * len(new_cones)
        )

    x, lam, r_stat = result
    report = audit(prog, x)
    stat = float(np.linalg.norm(r_stat)) / (1.0 + float(np.linalg.norm(c)))
    lam_min = float(lam[n_eq:].min(initial=0.0))
    ok = (
        report.overall <= feas_tol
        and stat <= tol
        and lam_min >= -math.sqrt(tol) * (1.0 + yscale)
    )
    return _PolishResult(x, report.overall, stat, ok)


def _polish(prog, A, b, c, dims, raw: _RawResult, tol: float) -> Optional[np.ndarray]:
    """Best verified polished point across a few active-set thresholds."""
    best = None
    best_obj = np.inf
    raw_obj = float(c @ raw.x)
    # the raw point may undercut the optimum by a few tol (it is slightly
    # infeasible); cap only guards against grossly wrong active sets
    cap = raw_obj + math.sqrt(tol) * (1.0 + abs(raw_obj))
    thresholds = (1e-4,) if A.shape[0] + A.shape[1] > 4000 else (1e-3, 1e-4, 1e-5)
    for thr in thresholds:
        res = _try_polish(prog, A, b, c, dims, raw, tol, thr)
        if res is None or not res.accepted:
            continue
        obj = float(c @ res.x)
        if obj <= cap and obj < best_obj:
            best, best_obj = res.x, obj
    return best


# ---------------------------------------------------------------------------
# Public solve
# ---------------------------------------------------------------------------


def solve(
    prog: ConicProgram,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> ConicSolution:
    """Solve the program; freezes it against further modification."""
    prog._frozen = True
    A, b, c, dims = _compile(prog)
    m, n = A.shape

    if n == 0:
        return ConicSolution(
            ConicStatus.OPTIMAL, np.zeros(0), 0.0, 0.0, 0.0, 0, (0.0, 0.0, 0.0)
        )
    if m == 0:
        if np.all(c == 0.0):
            x = np.zeros(n)
            return ConicSolution(ConicStatus.OPTIMAL, x, 0.0, 0.0, 0.0, 0, (0.0, 0.0, 0.0))
        return ConicSolution(
            ConicStatus.UNBOUNDED, -c, -np.inf, 0.0, 0.0, 0, (0.0, np.inf, 0.0)
        )

    def finish(status: ConicStatus, x: np.ndarray, raw: _RawResult) -> ConicSolution:
        report = audit(prog, x)
        return ConicSolution(
            status=status,
            x=x,
            objective=prog.objective_value(x),
            max_primal_residual=max(
                report.max_equality, report.max_inequality, report.max_bound
            ),
            max_cone_violation=report.max_cone,
            iterations=raw.iterations,
            residuals=(raw.pres, raw.dres, raw.gap),
        )

    emb = _Embedding(A, b, c, dims, tol)
    chunk = 2_500
    while True:
        budget = min(chunk, max_iter - emb.iterations)
        raw = emb.run(budget)

        if raw.status is ConicStatus.OPTIMAL:
            polished = _polish(prog, A, b, c, dims, raw, tol)
            return finish(ConicStatus.OPTIMAL, polished if polished is not None else raw.x, raw)

        if raw.status in (ConicStatus.INFEASIBLE, ConicStatus.UNBOUNDED):
            obj = -np.inf if raw.status is ConicStatus.UNBOUNDED else np.nan
            return ConicSolution(
                raw.status, raw.x, obj, np.inf, np.inf, raw.iterations, (np.inf,) * 3
            )

        # stalled or out of budget: a verified polish is an optimality
        # certificate in its own right
        if raw.pres <= 1e-3 and raw.y is not None:
            polished = _polish(prog, A, b, c, dims, raw, tol)
            if polished is not None:
                return finish(ConicStatus.OPTIMAL, polished, raw)

        if emb.iterations >= max_iter:
            return finish(ConicStatus.NUMERICAL_FAILURE, raw.x, raw)
