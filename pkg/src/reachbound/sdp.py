"""Dense log-barrier solver for small determinant-maximization and linear SDPs.

Problems have the form::

    minimize    f(v)
    subject to  M_j(v) >= 0,   j = 1..J

where each ``M_j`` is affine in the stacked free entries ``v`` of a handful of
matrix variables, and ``f`` is either ``-log det X(v)`` for one variable X or
a weighted sum of diagonal entries. The barrier path-following method
minimizes ``t f(v) - sum_j log det M_j(v) - log(rho**2 - |v|**2)`` with damped
Newton steps while increasing ``t`` geometrically. The last term keeps every
centering problem bounded when the feasible set is unbounded (``rho`` is far
larger than any variable in a meaningful solution).

A strictly feasible start is found by a phase-I problem that minimizes ``s``
subject to ``M_j(v) + s I > 0``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .affine import AffineExpr, Variable


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class NegLogDet:
    """Objective ``-log det X``."""

    variable: Variable


@dataclass(frozen=True)
class LinearTrace:
    """Objective ``sum_v sum_i w_v[i] * X_v[i, i]``."""

    weights: dict

    def __hash__(self):
        return id(self)


@dataclass(frozen=True)
class SolverConfig:
    gap_tol: float = 1e-9
    t0: float = 1.0
    mu: float = 10.0
    armijo: float = 0.01
    shrink: float = 0.5
    newton_tol: float = 1e-10
    max_newton: int = 100
    max_iterations: int = 5000
    radius: float = 1e4
    hessian_reg: float = 1e-12
    phase1_margin: float = 1e-9


@dataclass
class SolveReport:
    status: Status
    values: dict[str, np.ndarray]
    objective: float
    worst_violation: float
    iterations: int
    gap: float
    history: list[float] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def min_eig(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NumericalFailure("matrix has non-finite entries")
    try:
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(str(exc)) from exc


def feasibility_tolerance(matrices) -> float:
    """``1e-8 * (1 + largest entry magnitude)`` over a set of constraint values."""
    big = max((float(np.max(np.abs(M))) for M in matrices), default=0.0)
    return 1e-8 * (1.0 + big)


class _Block:
    """One matrix inequality restricted to the free entries it touches."""

    __slots__ = ("C", "A", "idx", "k", "eye")

    def __init__(self, C, A, idx):
        self.C = np.ascontiguousarray(C, dtype=float)
        self.A = np.ascontiguousarray(A, dtype=float)
        self.idx = np.asarray(idx, dtype=np.intp)
        self.k = self.C.shape[0]
        self.eye = np.eye(self.k)

    def matrix(self, x):
        return self.C + np.tensordot(x[self.idx], self.A, axes=1)

    def chol(self, x):
        try:
            return np.linalg.cholesky(self.matrix(x))
        except np.linalg.LinAlgError:
            return None

    def value(self, x):
        L = self.chol(x)
        if L is None:
            return None
        return -2.0 * float(np.sum(np.log(np.diag(L))))

    def derivs(self, x, g, H):
        """Accumulate gradient and Hessian of ``-log det M``; return the value."""
        L = self.chol(x)
        if L is None:
            return None
        Li = solve_triangular(L, self.eye, lower=True, check_finite=False)
        W = Li @ self.A @ Li.T
        g[self.idx] -= np.einsum("kii->k", W)
        Wf = W.reshape(W.shape[0], -1)
        H[np.ix_(self.idx, self.idx)] += Wf @ Wf.T
        return -2.0 * float(np.sum(np.log(np.diag(L))))


class _Barrier:
    """``t f(x) + sum_j -log det M_j(x) - log(rho^2 - |x[:nball]|^2)``."""

    def __init__(self, blocks, nvar, nball, radius, c=None, logdet=None):
        self.blocks = blocks
        self.nvar = nvar
        self.nball = nball
        self.r2 = radius * radius
        self.c = c
        self.logdet = logdet
        self.dof = sum(b.k for b in blocks) + 1

    def objective(self, x):
        if self.logdet is not None:
            v = self.logdet.value(x)
            return math.inf if v is None else v
        return float(self.c @ x)

    def value(self, x, t):
        y = x[: self.nball]
        slack = self.r2 - float(y @ y)
        if slack <= 0:
            return None
        total = -math.log(slack)
        for b in self.blocks:
            v = b.value(x)
            if v is None:
                return None
            total += v
        if self.logdet is not None:
            v = self.logdet.value(x)
            if v is None:
                return None
            return total + t * v
        return total + t * float(self.c @ x)

    def derivs(self, x, t):
        n = self.nvar
        g = np.zeros(n)
        H = np.zeros((n, n))
        y = x[: self.nball]
        slack = self.r2 - float(y @ y)
        if slack <= 0:
            return None
        val = -math.log(slack)
        g[: self.nball] += 2.0 * y / slack
        H[: self.nball, : self.nball] += 2.0 * np.eye(self.nball) / slack
        H[: self.nball, : self.nball] += 4.0 * np.outer(y, y) / slack**2
        for b in self.blocks:
            v = b.derivs(x, g, H)
            if v is None:
                return None
            val += v
        if self.logdet is not None:
            go = np.zeros(n)
            Ho = np.zeros((n, n))
            v = self.logdet.derivs(x, go, Ho)
            if v is None:
                return None
            return val + t * v, g + t * go, H + t * Ho
        return val + t * float(self.c @ x), g + t * self.c, H


def _newton_direction(g, H, reg):
    scale = max(1.0, float(np.max(np.abs(np.diag(H)))))
    shift = 0.0
    for _ in range(8):
        try:
            L = np.linalg.cholesky(H + shift * np.eye(H.shape[0]))
            y = solve_triangular(L, -g, lower=True, check_finite=False)
            return solve_triangular(L.T, y, lower=False, check_finite=False)
        except np.linalg.LinAlgError:
            shift = reg * scale if shift == 0.0 else shift * 100.0
    raise NumericalFailure("Newton system is not positive definite")


def _center(bar: _Barrier, x, t, cfg: SolverConfig, budget: list, stop=None):
    """Damped Newton on the barrier at fixed t. Returns the centred point."""
    for _ in range(cfg.max_newton):
        if budget[0] <= 0:
            raise _OutOfIterations(x)
        budget[0] -= 1
        r = bar.derivs(x, t)
        if r is None:
            raise NumericalFailure("iterate left the barrier domain")
        f0, g, H = r
        dx = _newton_direction(g, H, cfg.hessian_reg)
        slope = float(g @ dx)
        lam2 = -slope
        if lam2 / 2 <= cfg.newton_tol:
            return x
        s = 1.0
        if lam2 > 0.0625:
            while True:
                f1 = bar.value(x + s * dx, t)
                if f1 is not None and f1 <= f0 + cfg.armijo * s * slope:
                    break
                s *= cfg.shrink
                if s < 1e-14:
                    if lam2 < 1e-6:
                        return x
                    raise NumericalFailure("line search made no progress")
        else:
            # Inside the quadratic-convergence region the full step is taken;
            # only domain membership is enforced.
            while bar.value(x + s * dx, t) is None:
                s *= cfg.shrink
                if s < 1e-14:
                    return x
        x = x + s * dx
        if stop is not None and stop(x):
            return x
    return x


class _OutOfIterations(Exception):
    def __init__(self, x):
        self.x = x


class _Compiled:
    def __init__(self, variables, constraints, objective):
        self.variables = list(variables)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        self.offsets = {}
        off = 0
        for v in self.variables:
            self.offsets[v] = off
            off += v.size
        self.nvar = off

        self.constraints = list(constraints)
        self.blocks = [self._block(c.expr) for c in self.constraints]

        self.c = None
        self.logdet = None
        if isinstance(objective, NegLogDet):
            X = objective.variable
            self._check(X)
            self.logdet = self._block(X.expr)
        elif isinstance(objective, LinearTrace):
            self.c = np.zeros(self.nvar)
            for v, w in objective.weights.items():
                self._check(v)
                w = np.broadcast_to(np.asarray(w, dtype=float), (v.dim,))
                self.c[self.offsets[v]: self.offsets[v] + v.size] += v.pack(np.diag(w))
        else:
            raise TypeError(f"unsupported objective {objective!r}")

    def _check(self, v):
        if v not in self.offsets:
            raise ValueError(f"variable {v.name!r} is not among the declared variables")

    def _block(self, expr: AffineExpr):
        idx, mats = [], []
        for v, A in expr.coeffs.items():
            self._check(v)
            idx.extend(range(self.offsets[v], self.offsets[v] + v.size))
            mats.append(A)
        k = expr.shape[0]
        A = np.concatenate(mats) if mats else np.zeros((0, k, k))
        return _Block(expr.const, A, idx)

    def unpack(self, x):
        return {v.name: v.unpack(x[self.offsets[v]: self.offsets[v] + v.size]) for v in self.variables}


def _phase1(prob: _Compiled, cfg: SolverConfig, budget):
    """Return a strictly feasible point, or None when none exists."""
    n = prob.nvar
    blocks = list(prob.blocks)
    if prob.logdet is not None:
        blocks.append(prob.logdet)
    x = np.zeros(n + 1)
    worst = min((min_eig(b.C) for b in blocks), default=1.0)
    if worst > 0 and all(b.chol(x) is not None for b in blocks):
        return x[:n]
    aux = []
    for b in blocks:
        A = np.concatenate([b.A, b.eye[None]])
        aux.append(_Block(b.C, A, np.concatenate([b.idx, [n]])))
    c = np.zeros(n + 1)
    c[n] = 1.0
    bar = _Barrier(aux, n + 1, n, cfg.radius, c=c)
    x[n] = 1.0 + max(0.0, -worst)

    def found(z):
        return z[n] < -cfg.phase1_margin

    t = cfg.t0
    while True:
        x = _center(bar, x, t, cfg, budget, stop=found)
        if found(x):
            return x[:n]
        if bar.dof / t <= cfg.gap_tol:
            return None
        t *= cfg.mu


def solve(variables, constraints, objective, config: SolverConfig | None = None) -> SolveReport:
    """Minimize ``objective`` over the given matrix variables subject to LMIs.

    Parameters
    ----------
    variables : list of Variable
    constraints : list of LmiConstraint
        Both ``>= 0`` and ``> 0`` constraints are handled in the interior.
    objective : NegLogDet or LinearTrace
    config : SolverConfig, optional

    Returns
    -------
    SolveReport
        ``status`` is one of Optimal, Infeasible, MaxIterations or
        NumericalFailure. Values are keyed by variable name.
    """
    cfg = config or SolverConfig()
    prob = _Compiled(variables, constraints, objective)
    budget = [cfg.max_iterations]

    def report(status, x, t, history, msg=""):
        values = prob.unpack(x) if x is not None else {}
        worst = math.nan
        obj = math.nan
        if x is not None:
            worst = min((min_eig(b.matrix(x)) for b in prob.blocks), default=math.inf)
            obj = (
                -_logdet(prob.logdet.matrix(x)) if prob.logdet is not None else float(prob.c @ x)
            )
        gap = (sum(b.k for b in prob.blocks) + 1) / t if t else math.inf
        return SolveReport(status, values, obj, worst, cfg.max_iterations - budget[0], gap, history, msg)

    try:
        x = _phase1(prob, cfg, budget)
    except _OutOfIterations:
        return report(Status.MAX_ITERATIONS, None, None, [], "phase I iteration limit")
    except NumericalFailure as exc:
        return report(Status.NUMERICAL_FAILURE, None, None, [], f"phase I: {exc}")
    if x is None:
        return report(Status.INFEASIBLE, None, None, [], "no strictly feasible point")

    bar = _Barrier(prob.blocks, prob.nvar, prob.nvar, cfg.radius, c=prob.c, logdet=prob.logdet)
    t = cfg.t0
    history = []
    while True:
        try:
            x = _center(bar, x, t, cfg, budget)
        except _OutOfIterations as exc:
            return report(Status.MAX_ITERATIONS, exc.x, t, history)
        except NumericalFailure as exc:
            return report(Status.NUMERICAL_FAILURE, x, t, history, str(exc))
        history.append(bar.objective(x))
        if bar.dof / t <= cfg.gap_tol:
            return report(Status.OPTIMAL, x, t, history)
        t *= cfg.mu


def _logdet(M) -> float:
    sign, ld = np.linalg.slogdet(M)
    return ld if sign > 0 else -math.inf


def check_constraints(constraints, values: dict) -> tuple[float, float]:
    """Re-substitute ``values`` (Variable -> matrix) into every constraint.

    Returns ``(worst_min_eig, feas_tol)``.
    """
    mats = [c.matrix(values) for c in constraints]
    worst = min((min_eig(M) for M in mats), default=math.inf)
    return worst, feasibility_tolerance(mats)
