"""Dense strictly convex QP solver for the safety-filter problem family.

Problems have the fixed form

    min_z ||z + g||^2   subject to   A z <= b,

i.e. the Hessian is 2I and the unconstrained optimum is z = -g. The KKT
conditions, with the multiplier convention used throughout this package, are

    2 (z + g) + A^T lam = 0,   lam >= 0,   A z <= b,   lam_i (A_i z - b_i) = 0.

The production solver is a dual active-set method in the Goldfarb-Idnani
style: it starts dual-feasible at the unconstrained optimum (or at a primed
warm-start set), and repeatedly drives the most violated constraint to
activity, taking partial steps that drop blocking constraints whose
multipliers would cross zero. Because the Hessian is the identity (up to the
factor 2), every primal/dual step reduces to small dense solves with
A_W A_W^T. The method terminates in finitely many steps and detects
infeasibility when the incoming constraint's normal lies in the span of the
active normals and no blocking multiplier can be reduced.

A brute-force oracle (`solve_qp_oracle`) enumerates active sets for
cross-checking; it must never be used on problems beyond its budget.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max_iter"


class OracleBudgetError(ValueError):
    """The enumeration oracle was asked for more constraints than it can afford."""


@dataclass(frozen=True)
class QpProblem:
    """min ||z + g||^2 s.t. A z <= b with A of shape (m, n)."""

    g: np.ndarray
    a_matrix: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g", np.asarray(self.g, dtype=float))
        object.__setattr__(self, "a_matrix", np.atleast_2d(np.asarray(self.a_matrix, dtype=float)))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        m, n = self.a_matrix.shape
        if self.b.shape != (m,) and m > 0:
            raise ValueError(f"b has shape {self.b.shape}, expected ({m},)")
        if m > 0 and n != self.g.size:
            raise ValueError(f"A has {n} columns, g has {self.g.size}")
        if not (np.isfinite(self.g).all() and np.isfinite(self.a_matrix).all() and np.isfinite(self.b).all()):
            raise ValueError("QP data must be finite")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.a_matrix.shape[0] if self.a_matrix.size else 0


@dataclass
class QpSolution:
    z: np.ndarray
    duals: np.ndarray
    kkt_residual: float
    status: str
    iterations: int
    active_set: list[int] = field(default_factory=list)


def kkt_residual(prob: QpProblem, z: np.ndarray, duals: np.ndarray) -> float:
    """Max-norm KKT residual: stationarity, primal/dual feasibility, complementarity."""
    z = np.asarray(z, dtype=float)
    duals = np.asarray(duals, dtype=float)
    stat = 2.0 * (z + prob.g)
    if prob.m:
        stat = stat + prob.a_matrix.T @ duals
        slack = prob.a_matrix @ z - prob.b
        primal = max(0.0, float(slack.max()))
        dual_neg = max(0.0, float((-duals).max()))
        comp = float(np.abs(duals * slack).max())
    else:
        primal = dual_neg = comp = 0.0
    return max(float(np.abs(stat).max()), primal, dual_neg, comp)


class DualActiveSetSolver:
    """Reusable solver instance carrying warm-start state between calls.

    One instance per simulation thread: the stored active set from the
    previous solve primes the next one, which pays off along controller
    trajectories where activity patterns change slowly. Instances must not be
    shared concurrently.
    """

    def __init__(self, tol: float = 1e-9, max_iter: int = 500):
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self._warm: list[int] = []

    def reset(self) -> None:
        self._warm = []

    def solve(self, prob: QpProblem, warm_start: bool = True) -> QpSolution:
        n, m = prob.n, prob.m
        y = -prob.g  # unconstrained optimum
        a = prob.a_matrix
        b = prob.b

        if m == 0:
            return QpSolution(z=y.copy(), duals=np.zeros(0), kkt_residual=0.0,
                              status=STATUS_OPTIMAL, iterations=0, active_set=[])

        active: list[int] = []
        lam: list[float] = []
        z = y.copy()
        if warm_start and self._warm:
            z, active, lam = self._prime(y, a, b, [i for i in self._warm if i < m])

        iters = 0
        while iters < self.max_iter:
            iters += 1
            slack = a @ z - b
            pick = slack.copy()
            if active:
                pick[active] = -np.inf  # never re-select an active row
            p = int(np.argmax(pick))
            if pick[p] <= self.tol:
                # Polish: re-solve the equality-constrained system on the final
                # active set so stationarity and active slacks are exact, not
                # the accumulation of partial steps.
                z, active, lam = self._prime(y, a, b, active)
                slack = a @ z - b
                if active:
                    slack[active] = -np.inf
                if float(slack.max(initial=-np.inf)) > self.tol:
                    continue  # polishing exposed a violation; keep iterating
                duals = np.zeros(m)
                duals[active] = lam
                self._warm = list(active)
                return QpSolution(z=z, duals=duals, kkt_residual=kkt_residual(prob, z, duals),
                                  status=STATUS_OPTIMAL, iterations=iters, active_set=list(active))

            u_p = 0.0
            while iters < self.max_iter:
                iters += 1
                a_p = a[p]
                dependent = len(active) >= n  # n independent normals already span R^n
                if active:
                    a_w = a[active]
                    m_ww = a_w @ a_w.T
                    try:
                        r = np.linalg.solve(m_ww, a_w @ a_p)
                    except np.linalg.LinAlgError:
                        r = np.linalg.lstsq(m_ww, a_w @ a_p, rcond=None)[0]
                        dependent = True
                    d = 0.5 * (a_w.T @ r - a_p)
                    curv = 0.5 * (a_p @ a_p - (a_w @ a_p) @ r)
                else:
                    r = np.zeros(0)
                    d = -0.5 * a_p
                    curv = 0.5 * float(a_p @ a_p)

                # Scale-aware dependence test: curv is quadratic in the row norms.
                row_scale = max(float(a_p @ a_p), 1e-30)
                if dependent or curv <= 1e-9 * row_scale:
                    # New normal lies in the span of the active ones: pure dual step.
                    pos = r > 1e-12
                    if not pos.any():
                        duals = np.zeros(m)
                        duals[active] = lam
                        self._warm = []
                        return QpSolution(z=z, duals=duals, kkt_residual=kkt_residual(prob, z, duals),
                                          status=STATUS_INFEASIBLE, iterations=iters, active_set=list(active))
                    ratios = np.where(pos, np.asarray(lam) / np.where(pos, r, 1.0), np.inf)
                    j = int(np.argmin(ratios))
                    t = float(ratios[j])
                    lam = [lv - t * rv for lv, rv in zip(lam, r)]
                    u_p += t
                    del active[j], lam[j]
                    continue

                t_full = float(a_p @ z - b[p]) / curv
                if active:
                    pos = r > 1e-12
                    ratios = np.where(pos, np.asarray(lam) / np.where(pos, r, 1.0), np.inf)
                    j = int(np.argmin(ratios))
                    t_block = float(ratios[j])
                else:
                    j, t_block = -1, np.inf

                t = min(t_full, t_block)
                z = z + t * d
                lam = [lv - t * rv for lv, rv in zip(lam, r)]
                u_p += t
                if t_full <= t_block:
                    active.append(p)
                    lam.append(u_p)
                    break
                del active[j], lam[j]

        duals = np.zeros(m)
        duals[active] = lam
        self._warm = []
        return QpSolution(z=z, duals=duals, kkt_residual=kkt_residual(prob, z, duals),
                          status=STATUS_MAX_ITER, iterations=iters, active_set=list(active))

    @staticmethod
    def _prime(y, a, b, candidate):
        """Build a dual-feasible stationary start from a previous active set."""
        active = list(candidate)
        while active:
            a_w = a[active]
            m_ww = a_w @ a_w.T
            rhs = 2.0 * (a_w @ y - b[active])
            try:
                mu = _solve_refined(m_ww, rhs)
            except np.linalg.LinAlgError:
                active.pop()
                continue
            if (mu >= 0).all():
                z, mu = _primal_exact(y, a_w, b[active], mu)
                mu = np.maximum(mu, 0.0)  # correction can leave -1e-13 shadows
                return z, active, [float(v) for v in mu]
            active.pop(int(np.argmin(mu)))
        return y.copy(), [], []


def _solve_refined(m_ww: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Dense solve with one iterative-refinement pass."""
    mu = np.linalg.solve(m_ww, rhs)
    mu += np.linalg.solve(m_ww, rhs - m_ww @ mu)
    return mu


def _primal_exact(y, a_w, b_w, mu):
    """Drive active slacks to machine zero, compensating mu to keep stationarity.

    Multipliers on near-degenerate active sets can be huge, so even a 1e-13
    residual on an active row shows up in the complementarity products; the
    paired correction (z += A_W^T d, mu -= 2 d) removes it without disturbing
    2 (z + g) + A^T lam = 0.
    """
    z = y - 0.5 * (a_w.T @ mu)
    resid = b_w - a_w @ z
    try:
        delta = np.linalg.solve(a_w @ a_w.T, resid)
    except np.linalg.LinAlgError:
        return z, mu
    return z + a_w.T @ delta, mu - 2.0 * delta


def solve_qp(prob: QpProblem, tol: float = 1e-9, max_iter: int = 500) -> QpSolution:
    """One-shot solve without warm-start state."""
    return DualActiveSetSolver(tol=tol, max_iter=max_iter).solve(prob, warm_start=False)


def solve_qp_oracle(prob: QpProblem, tol: float = 1e-9, budget: int = 12) -> QpSolution:
    """Active-set enumeration oracle, exact up to linear-solve error.

    Tries every subset of constraints of size <= n, solves the corresponding
    equality-constrained problem, and keeps candidates with nonnegative
    multipliers that satisfy all remaining constraints. The unique optimum
    (when the problem is feasible) is the valid candidate of least objective.
    """
    m, n = prob.m, prob.n
    if m > budget:
        raise OracleBudgetError(f"oracle limited to {budget} constraints, got {m}")
    y = -prob.g
    a, b = prob.a_matrix, prob.b

    def scan(residual_cap: float) -> tuple[QpSolution | None, float]:
        best: QpSolution | None = None
        best_obj = np.inf
        for size in range(0, min(m, n) + 1):
            for subset in itertools.combinations(range(m), size):
                if size == 0:
                    z = y.copy()
                    mu = np.zeros(0)
                else:
                    idx = list(subset)
                    a_w = a[idx]
                    m_ww = a_w @ a_w.T
                    if np.linalg.matrix_rank(m_ww) < size:
                        continue
                    mu = _solve_refined(m_ww, 2.0 * (a_w @ y - b[idx]))
                    if (mu < -tol).any():
                        continue
                    z, mu = _primal_exact(y, a_w, b[idx], mu)
                if m and (a @ z - b > tol).any():
                    continue
                duals = np.zeros(m)
                duals[list(subset)] = np.maximum(mu, 0.0)
                res = kkt_residual(prob, z, duals)
                if res > residual_cap:
                    continue
                obj = float((z + prob.g) @ (z + prob.g))
                if obj < best_obj - 1e-15:
                    best = QpSolution(z=z, duals=duals, kkt_residual=res,
                                      status=STATUS_OPTIMAL, iterations=0, active_set=list(subset))
                    best_obj = obj
        return best, best_obj

    # A well-conditioned certificate exists for the optimum of almost every
    # feasible instance (Caratheodory on the active normals); near-degenerate
    # ones fall through to the relaxed pass before infeasibility is declared.
    best, _ = scan(residual_cap=1e-8)
    if best is None:
        best, _ = scan(residual_cap=np.inf)
    if best is None:
        return QpSolution(z=y.copy(), duals=np.zeros(m), kkt_residual=np.inf,
                          status=STATUS_INFEASIBLE, iterations=0, active_set=[])
    return best
