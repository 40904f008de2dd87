"""Small conic-program builder on top of the Clarabel interior-point solver.

Problems are assembled in Clarabel's standard form ``A x + s = b, s in K`` with
zero, non-negative, second-order, exponential and PSD-triangle cones. Complex
Hermitian matrix variables are stored through their real parameters and kept
PSD through the real embedding ``[[Re, -Im], [Im, Re]]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import clarabel
import numpy as np
from scipy import sparse

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_FAILURE = "numerical-failure"

SQRT2 = math.sqrt(2.0)


class Affine:
    """Scalar affine expression ``sum coef_i x_idx_i + const``."""

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const: float = 0.0):
        self.idx = np.asarray(idx, dtype=np.int64)
        self.coef = np.asarray(coef, dtype=float)
        self.const = float(const)

    @staticmethod
    def lift(value) -> "Affine":
        return value if isinstance(value, Affine) else Affine(const=float(value))

    def __add__(self, other):
        o = Affine.lift(other)
        return Affine(np.concatenate([self.idx, o.idx]), np.concatenate([self.coef, o.coef]),
                      self.const + o.const)

    __radd__ = __add__

    def __neg__(self):
        return Affine(self.idx, -self.coef, -self.const)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) - self

    def __mul__(self, c):
        c = float(c)
        return Affine(self.idx, self.coef * c, self.const * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / float(c))

    def value(self, x) -> float:
        return float(np.dot(self.coef, np.asarray(x)[self.idx]) + self.const)


def affine_sum(terms) -> Affine:
    terms = [Affine.lift(t) for t in terms]
    if not terms:
        return Affine()
    return Affine(np.concatenate([t.idx for t in terms]), np.concatenate([t.coef for t in terms]),
                  sum(t.const for t in terms))


def linear(idx, coef, const: float = 0.0) -> Affine:
    return Affine(idx, coef, const)


class HermitianVar:
    """n x n complex Hermitian matrix variable (real parameters: diagonal, Re and Im of the upper triangle)."""

    def __init__(self, problem: "ConicProblem", n: int):
        self.n = n
        iu = np.triu_indices(n, 1)
        self._iu = iu
        m = len(iu[0])
        self.diag_idx = problem._alloc(n)
        self.re_idx = problem._alloc(m)
        self.im_idx = problem._alloc(m)

    def inner(self, C) -> Affine:
        """Re Tr(C X) for any square C (its Hermitian part is used)."""
        C = np.asarray(C, dtype=complex)
        C = (C + C.conj().T) / 2
        iu = self._iu
        cu = C[iu]
        return Affine(np.concatenate([self.diag_idx, self.re_idx, self.im_idx]),
                      np.concatenate([C.real.diagonal(), 2 * cu.real, 2 * cu.imag]))

    def trace(self) -> Affine:
        return Affine(self.diag_idx, np.ones(self.n))

    def diag(self, i: int) -> Affine:
        return Affine([self.diag_idx[i]], [1.0])

    def value(self, x) -> np.ndarray:
        x = np.asarray(x)
        X = np.zeros((self.n, self.n), dtype=complex)
        iu = self._iu
        X[iu] = x[self.re_idx] + 1j * x[self.im_idx]
        X = X + X.conj().T
        X[np.diag_indices(self.n)] = x[self.diag_idx]
        return X

    def embedding_entries(self):
        """Real-embedding entries in PSD-triangle order: list of (var index, coefficient) per slot."""
        n = self.n
        entries = []
        for c in range(2 * n):
            for r in range(c + 1):
                i, j = r % n, c % n
                br, bc = r // n, c // n
                scale = 1.0 if r == c else SQRT2
                if br == bc:                                   # Re block
                    if i == j:
                        entries.append((self.diag_idx[i], scale))
                    else:
                        a, b = min(i, j), max(i, j)
                        entries.append((self.re_idx[self._pair(a, b)], scale))
                else:                                          # (0,1): -Im, (1,0) not in upper part unless r<c
                    # rows r < n, cols c >= n: block (0,1) = -M
                    if i == j:
                        entries.append((None, 0.0))
                    else:
                        sign = -1.0 if i < j else 1.0          # -M_ij, with M_ij = m_ij (i<j), -m_ji (i>j)
                        a, b = min(i, j), max(i, j)
                        entries.append((self.im_idx[self._pair(a, b)], sign * scale))
        return entries

    def _pair(self, a: int, b: int) -> int:
        n = self.n
        return a * n - a * (a + 1) // 2 + (b - a - 1)


def hermitian_real_embedding(H) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("square matrix required")
    scale = max(1.0, float(np.max(np.abs(H), initial=0.0)))
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    R, M = H.real, H.imag
    return np.block([[R, -M], [M, R]])


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    objective: float
    violation: float
    iterations: int = 0
    solver_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def value(self, expr):
        if isinstance(expr, (Affine, HermitianVar)):
            return expr.value(self.x)
        return np.array([e.value(self.x) for e in expr])


class ConicProblem:
    """Incrementally assembled conic program with a linear objective."""

    def __init__(self):
        self.n = 0
        self._blocks: list = []       # (kind, dim, rows) with rows a list of Affine
        self._objective = Affine()
        self._sense = 1.0             # +1 minimise, -1 maximise

    # variables
    def _alloc(self, k: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + k)
        self.n += k
        return idx

    def variable(self, k: int = 1) -> list:
        return [Affine([i], [1.0]) for i in self._alloc(k)]

    def scalar(self) -> Affine:
        return self.variable(1)[0]

    def hermitian(self, n: int, psd: bool = True) -> HermitianVar:
        X = HermitianVar(self, n)
        if psd:
            self._blocks.append(("psd_herm", 2 * n, X))
        return X

    # constraints (each expression ``e`` below enters Clarabel as slack ``s = e``)
    def eq(self, lhs, rhs=0.0):
        self._blocks.append(("zero", 1, [Affine.lift(lhs) - rhs]))

    def le(self, lhs, rhs):
        self._blocks.append(("nonneg", 1, [Affine.lift(rhs) - lhs]))

    def ge(self, lhs, rhs):
        self.le(rhs, lhs)

    def soc(self, t, xs):
        """||xs||_2 <= t."""
        self._blocks.append(("soc", 1 + len(xs), [Affine.lift(t)] + [Affine.lift(e) for e in xs]))

    def rsoc(self, u, v, xs):
        """||xs||^2 <= u v with u, v >= 0."""
        u, v = Affine.lift(u), Affine.lift(v)
        self.soc(u + v, [2 * Affine.lift(e) for e in xs] + [u - v])

    def exp_cone(self, x, y, z):
        """y exp(x / y) <= z, y > 0."""
        self._blocks.append(("exp", 3, [Affine.lift(x), Affine.lift(y), Affine.lift(z)]))

    def log_ge(self, t, z):
        """t <= ln(z)."""
        self.exp_cone(t, 1.0, z)

    def exp_le(self, t, z):
        """exp(t) <= z."""
        self.exp_cone(t, 1.0, z)

    # objective
    def maximize(self, expr):
        self._objective, self._sense = Affine.lift(expr), -1.0

    def minimize(self, expr):
        self._objective, self._sense = Affine.lift(expr), 1.0

    # assembly
    def _assemble(self):
        rows_i, cols, vals, b, cones = [], [], [], [], []
        r = 0
        for kind, dim, data in self._blocks:
            if kind == "psd_herm":
                for slot, (vi, coef) in enumerate(data.embedding_entries()):
                    if vi is not None:
                        rows_i.append(r + slot)
                        cols.append(vi)
                        vals.append(-coef)
                    b.append(0.0)
                size = dim * (dim + 1) // 2
                r += size
                cones.append(clarabel.PSDTriangleConeT(dim))
                continue
            for e in data:
                rows_i.extend([r] * len(e.idx))
                cols.extend(e.idx.tolist())
                vals.extend((-e.coef).tolist())
                b.append(e.const)
                r += 1
            if kind == "zero":
                cones.append(clarabel.ZeroConeT(dim))
            elif kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(dim))
            elif kind == "soc":
                cones.append(clarabel.SecondOrderConeT(dim))
            elif kind == "exp":
                cones.append(clarabel.ExponentialConeT())
        A = sparse.csc_matrix((vals, (rows_i, cols)), shape=(r, self.n))
        A.sum_duplicates()
        q = np.zeros(self.n)
        np.add.at(q, self._objective.idx, self._sense * self._objective.coef)
        return A, np.asarray(b, dtype=float), q, _merge_cones(cones)

    def violation(self, x) -> float:
        """Largest violation of any constraint at x, recomputed from the expressions.

        Cone violations are measured relative to max(1, |bounding side|).
        """
        x = np.asarray(x)
        worst = 0.0
        for kind, dim, data in self._blocks:
            if kind == "psd_herm":
                X = data.value(x)
                worst = max(worst, -float(np.linalg.eigvalsh(X)[0]))
                continue
            v = np.array([e.value(x) for e in data])
            if kind == "zero":
                worst = max(worst, float(np.abs(v).max()))
            elif kind == "nonneg":
                worst = max(worst, -float(v.min()))
            elif kind == "soc":
                worst = max(worst, float(np.linalg.norm(v[1:]) - v[0]) / max(1.0, abs(v[0])))
            elif kind == "exp":
                xx, yy, zz = v
                if yy > 1e-12:
                    lhs = yy * math.exp(min(xx / yy, 700.0))
                    worst = max(worst, (lhs - zz) / max(1.0, abs(zz)), -yy)
                else:
                    worst = max(worst, -yy, xx, -zz)
        return worst


def _merge_cones(cones):
    merged = []
    for c in cones:
        if merged and type(c) is type(merged[-1]) and isinstance(c, (clarabel.ZeroConeT, clarabel.NonnegativeConeT)):
            merged[-1] = type(c)(merged[-1].dim + c.dim)
        else:
            merged.append(c)
    return merged


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "MaxIterations": ITERATION_LIMIT,
    "MaxTime": ITERATION_LIMIT,
}


_RETRY_SETTINGS = (
    {},
    {"static_regularization_constant": 1e-7},
    {"equilibrate_enable": False},
    {"static_regularization_constant": 1e-6, "equilibrate_enable": False},
)


def solve(problem: ConicProblem, tol_feas: float = 1e-8, tol_gap: float = 1e-8,
          max_iters: int = 200, violation_tol: float = 1e-5) -> ConicSolution:
    """Solve with Clarabel.

    An 'optimal' status requires both a solved/almost-solved solver status and an
    independently recomputed constraint violation of at most ``violation_tol``.
    Solves that stall are retried with stronger regularisation and without
    equilibration; the first acceptable attempt is returned.
    """
    A, b, q, cones = problem._assemble()
    P = sparse.csc_matrix((problem.n, problem.n))
    best = None
    for extra in _RETRY_SETTINGS:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = tol_feas
        settings.tol_gap_abs = tol_gap
        settings.tol_gap_rel = tol_gap
        settings.max_iter = max_iters
        for key, value in extra.items():
            setattr(settings, key, value)
        sol = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
        result = _classify(problem, sol, violation_tol)
        if result.status in (OPTIMAL, INFEASIBLE):
            return result
        if best is None or result.violation < best.violation:
            best = result
    return best


def _classify(problem: ConicProblem, sol, violation_tol: float) -> ConicSolution:
    raw = str(sol.status)
    status = _STATUS.get(raw, NUMERICAL_FAILURE)
    x = np.asarray(sol.x, dtype=float)
    if x.size != problem.n or not np.all(np.isfinite(x)):
        x = np.zeros(problem.n)
        viol = math.inf
        status = INFEASIBLE if status == INFEASIBLE else NUMERICAL_FAILURE
    else:
        viol = problem.violation(x)
    if status == OPTIMAL and viol > violation_tol:
        status = NUMERICAL_FAILURE
    return ConicSolution(status, x, problem._objective.value(x), viol, int(sol.iterations), raw)
