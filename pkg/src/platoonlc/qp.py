"""Dense strictly convex quadratic programming.

Solves min 0.5 x'Px + q'x subject to linear inequality rows, for the small
per-vehicle problems (a handful of variables, at most a dozen rows).  The
main path is a primal active-set iteration started from the unconstrained
minimizer; a working set of rows is treated as equalities and solved through
the KKT linear system, adding the most-violated row and dropping rows with
negative multipliers.  When the working set degenerates (or an instance is
infeasible) the solver falls back to exhaustive active-set enumeration,
which for strictly convex problems is an exact decision procedure: a
feasible problem always has a KKT point on some linearly independent subset
of rows, so finding none proves the feasible set empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np

FEAS_TOL = 1e-9       # row violation treated as zero
DUAL_TOL = 1e-10      # multiplier negativity treated as zero
MAX_ENUM_ROWS = 24    # guard against accidental misuse on large problems


class QpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    coeffs: np.ndarray
    rhs: float
    sense: str  # "le" or "ge"
    label: str = ""


@dataclass(eq=False)
class QpProblem:
    dim: int
    P: np.ndarray
    q: np.ndarray
    rows: list[LinearConstraint] = field(default_factory=list)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        if self.P.shape != (self.dim, self.dim) or self.q.shape != (self.dim,):
            raise ValueError("cost dimensions inconsistent with dim")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-12:
            raise ValueError("P must be symmetric")
        try:
            np.linalg.cholesky(self.P)
        except np.linalg.LinAlgError as exc:
            raise ValueError("P must be positive definite") from exc
        for r in self.rows:
            if np.asarray(r.coeffs).shape != (self.dim,):
                raise ValueError("row dimension mismatch")
            if r.sense not in ("le", "ge"):
                raise ValueError(f"unknown sense {r.sense!r}")

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """All rows as A x <= b (ge rows are negated)."""
        if not self.rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        A = np.array(
            [r.coeffs if r.sense == "le" else -np.asarray(r.coeffs) for r in self.rows],
            dtype=float,
        )
        b = np.array(
            [r.rhs if r.sense == "le" else -r.rhs for r in self.rows], dtype=float
        )
        return A, b

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpSolution:
    status: QpStatus
    x: np.ndarray | None
    active_set: tuple[int, ...]
    multipliers: np.ndarray | None  # aligned with active_set, normalized sign
    objective: float | None


@dataclass
class KktReport:
    primal_violation: float
    dual_violation: float
    stationarity: float
    complementarity: float
    failures: list[str]

    @property
    def ok(self) -> bool:
        return not self.failures


def _solve_eqp(P, q, A_w, b_w):
    """Equality-constrained subproblem via the KKT system.

    Returns (x, lam) or None when the system is singular (dependent rows).
    """
    n = P.shape[0]
    m = A_w.shape[0]
    if m == 0:
        return np.linalg.solve(P, -q), np.zeros(0)
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = P
    kkt[:n, n:] = A_w.T
    kkt[n:, :n] = A_w
    rhs = np.concatenate([-q, b_w])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    # guard against a numerically singular system that solve did not flag
    if np.max(np.abs(kkt @ sol - rhs)) > 1e-6 * max(1.0, np.max(np.abs(rhs))):
        return None
    return sol[:n], sol[n:]


def _active_set_iteration(p: QpProblem, A, b):
    """Main loop; returns QpSolution on clean termination, else None."""
    m = len(b)
    work: list[int] = []
    max_iter = 30 + 10 * (m + p.dim)
    for _ in range(max_iter):
        res = _solve_eqp(p.P, p.q, A[work], b[work])
        if res is None:
            return None
        x, lam = res
        if lam.size and np.min(lam) < -DUAL_TOL:
            work.pop(int(np.argmin(lam)))
            continue
        viol = A @ x - b if m else np.zeros(0)
        viol[work] = -np.inf  # rows already held as equalities
        worst = int(np.argmax(viol)) if m else -1
        if worst < 0 or viol[worst] <= FEAS_TOL * max(1.0, float(np.max(np.abs(b), initial=0.0))):
            order = np.argsort(work)
            return QpSolution(
                status=QpStatus.OPTIMAL,
                x=x,
                active_set=tuple(int(work[i]) for i in order),
                multipliers=lam[order] if lam.size else np.zeros(0),
                objective=p.objective(x),
            )
        work.append(worst)  # most violated; argmax takes the lowest index on ties
    return None


def _enumerate_kkt(p: QpProblem, A, b):
    """Exact fallback: test every linearly independent active subset."""
    m = len(b)
    if m > MAX_ENUM_ROWS:
        raise RuntimeError("active-set enumeration fallback is limited to small problems")
    scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    best = None
    for size in range(0, min(p.dim, m) + 1):
        for subset in combinations(range(m), size):
            sel = list(subset)
            if sel and np.linalg.matrix_rank(A[sel]) < len(sel):
                continue
            res = _solve_eqp(p.P, p.q, A[sel], b[sel])
            if res is None:
                continue
            x, lam = res
            if lam.size and np.min(lam) < -1e-7:
                continue
            if m and np.max(A @ x - b) > 1e-7 * scale:
                continue
            obj = p.objective(x)
            if best is None or obj < best[0]:
                best = (obj, x, tuple(sel), lam)
    if best is None:
        return QpSolution(QpStatus.INFEASIBLE, None, (), None, None)
    obj, x, sel, lam = best
    order = np.argsort(sel)
    return QpSolution(
        status=QpStatus.OPTIMAL,
        x=x,
        active_set=tuple(sel[i] for i in order),
        multipliers=lam[order] if lam.size else np.zeros(0),
        objective=obj,
    )


def solve(p: QpProblem) -> QpSolution:
    """Solve the problem; infeasibility is a status, not an exception."""
    A, b = p.normalized()
    sol = _active_set_iteration(p, A, b)
    if sol is not None:
        return sol
    return _enumerate_kkt(p, A, b)


def kkt_check(p: QpProblem, s: QpSolution) -> KktReport:
    """Verify first-order optimality of a claimed solution."""
    if s.status is not QpStatus.OPTIMAL:
        raise ValueError("kkt_check requires an Optimal solution")
    A, b = p.normalized()
    x = s.x
    active = list(s.active_set)
    lam = s.multipliers if s.multipliers is not None else np.zeros(len(active))

    primal = float(np.max(A @ x - b, initial=0.0))
    dual = float(max(0.0, -np.min(lam, initial=0.0)))
    grad = p.P @ x + p.q
    if active:
        grad = grad + A[active].T @ lam
    stationarity = float(np.max(np.abs(grad)))
    comp = float(abs(lam @ (A[active] @ x - b[active]))) if active else 0.0

    failures = []
    if primal > 1e-8:
        failures.append(f"primal feasibility violated by {primal:.3e}")
    if dual > 1e-9:
        failures.append(f"negative multiplier {dual:.3e}")
    if stationarity > 1e-7:
        failures.append(f"stationarity residual {stationarity:.3e}")
    if comp > 1e-7:
        failures.append(f"complementary slackness residual {comp:.3e}")
    return KktReport(primal, dual, stationarity, comp, failures)
