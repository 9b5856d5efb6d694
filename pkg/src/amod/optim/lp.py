"""Sparse LP representation and an exact two-phase simplex solver.

The simplex works on a dense tableau and uses Bland's rule (lowest index
entering variable, lowest index leaving variable on ratio ties), so it never
cycles and always returns a basic solution.  Large problems can be routed to
HiGHS' dual simplex through ``method="highs"``; ``"auto"`` picks by size.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
# dense tableau cells above which "auto" hands the problem to HiGHS
AUTO_DENSE_LIMIT = 120_000

LE, EQ, GE = "<=", "==", ">="


@dataclass
class LpProblem:
    """``sense`` c.x subject to sparse rows and per-variable bounds.

    Rows are stored as ``(indices, coefficients, relation, rhs)``; bounds
    default to ``[0, +inf)``.
    """

    n_vars: int
    objective: np.ndarray = None
    sense: str = "min"
    rows: list = field(default_factory=list)
    lower: np.ndarray = None
    upper: np.ndarray = None
    names: list | None = None

    def __post_init__(self):
        if self.objective is None:
            self.objective = np.zeros(self.n_vars)
        self.objective = np.asarray(self.objective, dtype=np.float64)
        if self.lower is None:
            self.lower = np.zeros(self.n_vars)
        if self.upper is None:
            self.upper = np.full(self.n_vars, np.inf)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")

    def add_row(self, coeffs, rel: str, rhs: float) -> None:
        """Add a constraint; ``coeffs`` is a ``{var: coef}`` dict or an ``(idx, vals)`` pair."""
        if isinstance(coeffs, dict):
            idx = np.fromiter(coeffs.keys(), dtype=np.int64, count=len(coeffs))
            val = np.fromiter(coeffs.values(), dtype=np.float64, count=len(coeffs))
        else:
            idx = np.asarray(coeffs[0], dtype=np.int64)
            val = np.asarray(coeffs[1], dtype=np.float64)
        if rel not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {rel!r}")
        self.rows.append((idx, val, rel, float(rhs)))

    def check(self) -> None:
        if self.objective.shape != (self.n_vars,):
            raise ValueError(f"objective has {self.objective.size} entries, problem has {self.n_vars} variables")
        if self.lower.shape != (self.n_vars,) or self.upper.shape != (self.n_vars,):
            raise ValueError("bounds do not match n_vars")
        if not np.isfinite(self.objective).all():
            raise ValueError("objective coefficients must be finite")
        for k, (idx, val, _, rhs) in enumerate(self.rows):
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
                raise ValueError(f"row {k} references a variable outside [0, {self.n_vars})")
            if idx.shape != val.shape:
                raise ValueError(f"row {k}: index/coefficient length mismatch")
            if not (np.isfinite(val).all() and math.isfinite(rhs)):
                raise ValueError(f"row {k}: coefficients and rhs must be finite")

    def dense(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        A = np.zeros((len(self.rows), self.n_vars))
        b = np.empty(len(self.rows))
        rel = []
        for k, (idx, val, r, rhs) in enumerate(self.rows):
            np.add.at(A[k], idx, val)
            b[k] = rhs
            rel.append(r)
        return A, b, rel

    def sparse_matrix(self) -> sparse.csr_matrix:
        if not self.rows:
            return sparse.csr_matrix((0, self.n_vars))
        data = np.concatenate([r[1] for r in self.rows])
        cols = np.concatenate([r[0] for r in self.rows])
        rows = np.concatenate([np.full(r[0].size, k) for k, r in enumerate(self.rows)])
        return sparse.csr_matrix((data, (rows, cols)), shape=(len(self.rows), self.n_vars))

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Constraint violations (>= 0) of ``x``, one per row, on max-abs scaled rows."""
        out = np.zeros(len(self.rows))
        for k, (idx, val, rel, rhs) in enumerate(self.rows):
            scale = max(1.0, np.abs(val).max(initial=0.0), abs(rhs))
            lhs = float(val @ x[idx])
            if rel == LE:
                out[k] = max(0.0, lhs - rhs) / scale
            elif rel == GE:
                out[k] = max(0.0, rhs - lhs) / scale
            else:
                out[k] = abs(lhs - rhs) / scale
        return out


@dataclass
class LpSolution:
    status: str
    values: np.ndarray
    objective_value: float
    iterations: int = 0
    method: str = "simplex"

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _Unbounded(Exception):
    pass


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    nz = np.nonzero(np.abs(col) > 0)[0]
    if nz.size:
        T[nz] -= np.outer(col[nz], T[r])


def _run_simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_iter: int) -> int:
    """Minimize the objective held in the last tableau row; Bland's rule."""
    m = T.shape[0] - 1
    it = 0
    while True:
        red = T[m, :-1]
        cand = np.nonzero((red < -PIVOT_TOL) & allowed)[0]
        if cand.size == 0:
            return it
        c = int(cand[0])
        colv = T[:m, c]
        pos = np.nonzero(colv > PIVOT_TOL)[0]
        if pos.size == 0:
            raise _Unbounded()
        ratios = T[pos, -1] / colv[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, c)
        basis[r] = c
        it += 1
        if it > max_iter:
            raise RuntimeError(f"simplex exceeded {max_iter} iterations")


def _solve_simplex(p: LpProblem, max_iter: int | None = None) -> LpSolution:
    n = p.n_vars
    A, b, rel = p.dense()
    lo, hi = p.lower, p.upper
    sign = -1.0 if p.sense == "max" else 1.0
    c0 = sign * p.objective

    # substitute bounds: x = shift + M @ z with z >= 0
    cols, shift = [], np.zeros(n)
    extra_rows = []
    for j in range(n):
        if math.isfinite(lo[j]) and hi[j] == lo[j]:
            shift[j] = lo[j]
        elif math.isfinite(lo[j]):
            shift[j] = lo[j]
            cols.append([(j, 1.0)])
            if math.isfinite(hi[j]):
                if hi[j] < lo[j] - FEAS_TOL:
                    return LpSolution("infeasible", np.full(n, np.nan), math.nan, 0)
                extra_rows.append((len(cols) - 1, hi[j] - lo[j]))
        elif math.isfinite(hi[j]):
            shift[j] = hi[j]
            cols.append([(j, -1.0)])
        else:
            cols.append([(j, 1.0)])
            cols.append([(j, -1.0)])
    nz = len(cols)
    Mz = np.zeros((n, max(nz, 0)))
    for k, entries in enumerate(cols):
        for j, s in entries:
            Mz[j, k] = s
    Az = A @ Mz
    bz = b - A @ shift
    cz = c0 @ Mz
    const = float(c0 @ shift)
    if extra_rows:
        E = np.zeros((len(extra_rows), nz))
        for r, (k, ub) in enumerate(extra_rows):
            E[r, k] = 1.0
        Az = np.vstack([Az, E])
        bz = np.concatenate([bz, [ub for _, ub in extra_rows]])
        rel = rel + [LE] * len(extra_rows)

    m = Az.shape[0]
    rel = list(rel)
    for i in range(m):
        if bz[i] < 0:
            Az[i] *= -1
            bz[i] *= -1
            rel[i] = {LE: GE, GE: LE, EQ: EQ}[rel[i]]
        scale = np.abs(Az[i]).max(initial=0.0)
        if scale > 0:
            Az[i] /= scale
            bz[i] /= scale

    n_slack = sum(r != EQ for r in rel)
    n_art = sum(r != LE for r in rel)
    ncol = nz + n_slack + n_art
    T = np.zeros((m + 1, ncol + 1))
    T[:m, :nz] = Az
    T[:m, -1] = bz
    basis = [0] * m
    s = nz
    a = nz + n_slack
    art_cols = []
    for i, r in enumerate(rel):
        if r == LE:
            T[i, s] = 1.0
            basis[i] = s
            s += 1
        else:
            if r == GE:
                T[i, s] = -1.0
                s += 1
            T[i, a] = 1.0
            basis[i] = a
            art_cols.append(a)
            a += 1
    if max_iter is None:
        max_iter = 50 * (m + ncol) + 1000
    it = 0
    is_art = np.zeros(ncol, dtype=bool)
    is_art[art_cols] = True

    if art_cols:
        # phase 1: minimize the sum of artificials
        T[m, :] = 0.0
        T[m, art_cols] = 1.0
        for i in range(m):
            if is_art[basis[i]]:
                T[m] -= T[i]
        it += _run_simplex(T, basis, np.ones(ncol, dtype=bool), max_iter)
        if -T[m, -1] > FEAS_TOL * max(1.0, m):
            return LpSolution("infeasible", np.full(n, np.nan), math.nan, it)
        # drive remaining (zero-level) artificials out of the basis
        keep = []
        for i in range(m):
            if is_art[basis[i]]:
                cand = np.nonzero((np.abs(T[i, :ncol]) > PIVOT_TOL) & ~is_art)[0]
                if cand.size:
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                    keep.append(i)
                # otherwise the row is redundant and dropped
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[m:]])
        basis = [basis[i] for i in keep]
        m = len(keep)

    # phase 2
    T[m, :] = 0.0
    T[m, :nz] = cz
    for i in range(m):
        cb = T[m, basis[i]]
        if cb != 0.0:
            T[m] -= cb * T[i]
    try:
        it += _run_simplex(T, basis, ~is_art, max_iter)
    except _Unbounded:
        return LpSolution("unbounded", np.full(n, np.nan), math.inf if p.sense == "max" else -math.inf, it)
    z = np.zeros(ncol)
    for i, bv in enumerate(basis):
        z[bv] = T[i, -1]
    x = shift + Mz @ z[:nz]
    return LpSolution("optimal", x, float(p.objective @ x), it, "simplex")


def _solve_highs(p: LpProblem) -> LpSolution:
    A = p.sparse_matrix().tocsr()
    rel = np.array([r[2] for r in p.rows])
    rhs = np.array([r[3] for r in p.rows], dtype=np.float64)
    le, ge, eq = rel == LE, rel == GE, rel == EQ
    A_ub = sparse.vstack([A[le], -A[ge]]) if (le.any() or ge.any()) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = rhs[eq] if eq.any() else None
    c = -p.objective if p.sense == "max" else p.objective
    bounds = np.column_stack([np.where(np.isfinite(p.lower), p.lower, -np.inf),
                              np.where(np.isfinite(p.upper), p.upper, np.inf)])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs-ds")
    if res.status == 0:
        return LpSolution("optimal", res.x, float(p.objective @ res.x), int(res.nit), "highs")
    if res.status == 2:
        return LpSolution("infeasible", np.full(p.n_vars, np.nan), math.nan, int(res.nit), "highs")
    if res.status == 3:
        return LpSolution("unbounded", np.full(p.n_vars, np.nan),
                          math.inf if p.sense == "max" else -math.inf, int(res.nit), "highs")
    raise RuntimeError(f"HiGHS failed: {res.message}")


def solve_lp(p: LpProblem, method: str = "auto") -> LpSolution:
    """Solve ``p`` exactly.

    ``method`` is ``"simplex"`` (built-in Bland simplex), ``"highs"`` or
    ``"auto"`` (built-in simplex unless the dense tableau would be large).
    Raises ``ValueError`` on dimension mismatches.
    """
    p.check()
    if _DUMP["dir"] is not None:
        _DUMP["count"] += 1
        write_lp_file(p, _DUMP["dir"] / f"lp_{_DUMP['count']:06d}.lp")
    if method == "auto":
        cells = (len(p.rows) + int(np.isfinite(p.upper).sum()) + 1) * (2 * p.n_vars + len(p.rows) + 1)
        method = "simplex" if cells <= AUTO_DENSE_LIMIT else "highs"
    if method == "simplex":
        return _solve_simplex(p)
    if method == "highs":
        return _solve_highs(p)
    raise ValueError(f"unknown LP method {method!r}")


_DUMP = {"dir": None, "count": 0}


@contextmanager
def dump_lps(directory):
    """Within the block, every ``solve_lp`` call also writes its problem to ``directory``."""
    prev = dict(_DUMP)
    _DUMP["dir"] = Path(directory)
    _DUMP["dir"].mkdir(parents=True, exist_ok=True)
    _DUMP["count"] = 0
    try:
        yield _DUMP["dir"]
    finally:
        _DUMP.update(prev)


def write_lp_file(p: LpProblem, path) -> None:
    """Dump ``p`` in CPLEX LP text format."""
    names = p.names or [f"x{j}" for j in range(p.n_vars)]

    def expr(idx, val):
        terms = [f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}" for j, v in zip(idx, val) if v != 0]
        return " ".join(terms) if terms else "0 " + names[0]

    nzo = np.nonzero(p.objective)[0]
    lines = ["Maximize" if p.sense == "max" else "Minimize", " obj: " + expr(nzo, p.objective[nzo]), "Subject To"]
    for k, (idx, val, rel, rhs) in enumerate(p.rows):
        op = {LE: "<=", GE: ">=", EQ: "="}[rel]
        lines.append(f" c{k}: {expr(idx, val)} {op} {rhs:.12g}")
    lines.append("Bounds")
    for j in range(p.n_vars):
        lo, hi = p.lower[j], p.upper[j]
        lo_s = "-inf" if not math.isfinite(lo) else f"{lo:.12g}"
        hi_s = "+inf" if not math.isfinite(hi) else f"{hi:.12g}"
        lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
