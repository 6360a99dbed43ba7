"""Safe-gradient-flow controller: QP assembly, evaluation, and Euler stepping.

The control vector is u = [p_1..p_G, q_1..q_G]; every module shares this
layout. One controller evaluation solves

    min_z ||z + grad C_p(u) + Gamma_v^T grad C_v(nu)||^2
    s.t.  -Gamma_v z <= -beta (V_lo 1 - nu)
           Gamma_v z <= -beta (nu - V_hi 1)
           Gamma_i z <= -beta (iota - I_hi 1)
           J_ell_i(p_i, q_i) z_(i) <= -beta ell_i(p_i, q_i)   for each DER i

and the discrete update is u <- u + eta * dt * z followed by the per-DER
hardware clamp. Row order is fixed (voltage-low, voltage-high, current, then
5 rows per DER) so dual variables keep their meaning across steps.

The exact variant replaces Gamma_v / Gamma_i with finite-difference Jacobians
of the true power-flow map at the current u; it is the benchmarking reference,
not a production path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import derconstraints as der
from .derconstraints import ThetaVector, project_control
from .grid import NetworkModel
from .powerflow import (
    GridState,
    LinearModel,
    measure,
    measurement_jacobians,
    solve_pf_fixed_point,
)
from .qpsolver import DualActiveSetSolver, QpProblem, QpSolution, STATUS_OPTIMAL


class ControllerFaultError(RuntimeError):
    """The safety QP came back infeasible; carries a diagnostic snapshot."""

    def __init__(self, msg, snapshot=None):
        super().__init__(msg)
        self.snapshot = snapshot


@dataclass
class CostSpec:
    """DER operating cost plus an optional quadratic voltage-profile term.

    C_p(u) = sum_i c_p ((s_n_i - p_i)/s_n_i)^2 + c_q (q_i/s_n_i)^2 penalizes
    curtailment and reactive usage; the voltage term is
    0.5 * voltage_cost_weight * ||nu - nu_ref||^2 (off by default).
    """

    c_p: float = 3.0
    c_q: float = 1.0
    voltage_cost_weight: float = 0.0
    nu_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.c_p < 0 or self.c_q < 0:
            raise ValueError("cost weights must be nonnegative")


@dataclass
class SgfConfig:
    """Controller gains: barrier rate beta, flow gain eta, Euler step dt (s)."""

    beta: float = 1.0
    eta: float = 0.2
    dt: float = 1.0
    cost: CostSpec = field(default_factory=CostSpec)

    def __post_init__(self):
        if self.beta <= 0 or self.eta <= 0 or self.dt <= 0:
            raise ValueError("beta, eta, dt must all be positive")


def split_u(u: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray]:
    """(p, q) views of the stacked control vector."""
    return u[:g], u[g:]


def cost_gradient(cost: CostSpec, theta: ThetaVector, u: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(dC_p/du, dC_v/dnu); the voltage part is zero unless a weight is set."""
    g = theta.der_count
    u = np.asarray(u, dtype=float)
    if u.size != 2 * g:
        raise ValueError(f"control vector length {u.size} != 2G = {2 * g}")
    s_n = np.array([d.s_n for d in theta.ders])
    p, q = split_u(u, g)
    grad_u = np.concatenate([
        -2.0 * cost.c_p * (s_n - p) / s_n**2,
        2.0 * cost.c_q * q / s_n**2,
    ])
    if cost.voltage_cost_weight > 0.0:
        ref = np.zeros_like(nu) if cost.nu_ref is None else np.asarray(cost.nu_ref, dtype=float)
        grad_v = cost.voltage_cost_weight * (np.asarray(nu, dtype=float) - ref)
    else:
        grad_v = np.zeros(np.asarray(nu).size)
    return grad_u, grad_v


def constraint_rows(gamma_v: np.ndarray, gamma_i: np.ndarray, theta: ThetaVector,
                    u: np.ndarray, nu: np.ndarray, iota: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (A, b) of the barrier rows, in the fixed documented order."""
    g = theta.der_count
    m = gamma_v.shape[0]
    n_l = gamma_i.shape[0]
    if gamma_v.shape[1] != 2 * g or (n_l and gamma_i.shape[1] != 2 * g):
        raise ValueError("sensitivity matrices do not match 2G columns")
    if np.asarray(nu).size != m or np.asarray(iota).size != n_l:
        raise ValueError("measurement lengths do not match the sensitivity rows")
    p, q = split_u(np.asarray(u, dtype=float), g)

    a_blocks = [-gamma_v, gamma_v]
    b_blocks = [beta * (nu - theta.v_lower), beta * (theta.v_upper - nu)]
    if n_l:
        a_blocks.append(gamma_i)
        b_blocks.append(beta * (theta.i_upper - iota))
    der_rows = np.zeros((der.N_ROWS * g, 2 * g))
    der_rhs = np.empty(der.N_ROWS * g)
    for i, d in enumerate(theta.ders):
        jac = der.ell_jacobian(d, p[i], q[i])
        rows = slice(der.N_ROWS * i, der.N_ROWS * (i + 1))
        der_rows[rows, i] = jac[:, 0]
        der_rows[rows, g + i] = jac[:, 1]
        der_rhs[rows] = -beta * der.ell(d, p[i], q[i])
    a_blocks.append(der_rows)
    b_blocks.append(der_rhs)
    return np.vstack(a_blocks), np.concatenate(b_blocks)


def assemble_qp(lm: LinearModel, theta: ThetaVector, u: np.ndarray, xi: GridState, cfg: SgfConfig) -> QpProblem:
    """Controller QP at the current measurements, using the fixed linear model."""
    grad_u, grad_v = cost_gradient(cfg.cost, theta, u, xi.nu)
    g_vec = grad_u + lm.gamma_v.T @ grad_v
    a_mat, b_vec = constraint_rows(lm.gamma_v, lm.gamma_i, theta, u, xi.nu, xi.iota, cfg.beta)
    return QpProblem(g=g_vec, a_matrix=a_mat, b=b_vec)


@dataclass
class SgfStepResult:
    u_next: np.ndarray
    z: np.ndarray
    qp: QpSolution


def _step_from_qp(prob: QpProblem, theta: ThetaVector, u: np.ndarray, cfg: SgfConfig,
                  solver: DualActiveSetSolver, context: str) -> SgfStepResult:
    sol = solver.solve(prob)
    if sol.status == "infeasible":
        raise ControllerFaultError(
            f"{context}: safety QP infeasible",
            snapshot={"u": np.array(u), "problem": prob, "solution": sol},
        )
    u_next = np.asarray(u, dtype=float) + cfg.eta * cfg.dt * sol.z
    u_next = project_control(theta, u_next)
    return SgfStepResult(u_next=u_next, z=sol.z, qp=sol)


def sgf_step(lm: LinearModel, theta: ThetaVector, u: np.ndarray, xi: GridState,
             cfg: SgfConfig, solver: DualActiveSetSolver | None = None) -> SgfStepResult:
    """One Euler step of the linear-model flow, with the hardware clamp."""
    solver = solver or DualActiveSetSolver()
    return _step_from_qp(assemble_qp(lm, theta, u, xi, cfg), theta, u, cfg, solver, "sgf_step")


def exact_sgf_step(net: NetworkModel, theta: ThetaVector, u: np.ndarray, loads: np.ndarray,
                   cfg: SgfConfig, solver: DualActiveSetSolver | None = None,
                   fd_step: float = 1e-5, pf_tol: float = 1e-11) -> SgfStepResult:
    """Reference step using finite-difference Jacobians of the true flow map."""
    solver = solver or DualActiveSetSolver()
    pf = solve_pf_fixed_point(net, u, loads, tol=pf_tol)
    xi = measure(net, pf)
    j_v, j_i = measurement_jacobians(net, u, loads, fd_step=fd_step, pf_tol=pf_tol)
    grad_u, grad_v = cost_gradient(cfg.cost, theta, u, xi.nu)
    g_vec = grad_u + j_v.T @ grad_v
    a_mat, b_vec = constraint_rows(j_v, j_i, theta, u, xi.nu, xi.iota, cfg.beta)
    prob = QpProblem(g=g_vec, a_matrix=a_mat, b=b_vec)
    return _step_from_qp(prob, theta, u, cfg, solver, "exact_sgf_step")


def flow_velocity(lm: LinearModel, theta: ThetaVector, u: np.ndarray, xi: GridState,
                  cfg: SgfConfig, solver: DualActiveSetSolver | None = None) -> np.ndarray:
    """The linear-model flow map alone (no Euler step, no clamp)."""
    solver = solver or DualActiveSetSolver()
    sol = solver.solve(assemble_qp(lm, theta, u, xi, cfg))
    if sol.status == "infeasible":
        raise ControllerFaultError("flow evaluation: safety QP infeasible",
                                   snapshot={"u": np.array(u)})
    return sol.z


def exact_flow_velocity(net: NetworkModel, theta: ThetaVector, u: np.ndarray, loads: np.ndarray,
                        cfg: SgfConfig, solver: DualActiveSetSolver | None = None,
                        fd_step: float = 1e-5, pf_tol: float = 1e-11) -> np.ndarray:
    """The ideal flow map with true finite-difference Jacobians (no step, no clamp)."""
    solver = solver or DualActiveSetSolver()
    pf = solve_pf_fixed_point(net, u, loads, tol=pf_tol)
    xi = measure(net, pf)
    j_v, j_i = measurement_jacobians(net, u, loads, fd_step=fd_step, pf_tol=pf_tol)
    grad_u, grad_v = cost_gradient(cfg.cost, theta, u, xi.nu)
    g_vec = grad_u + j_v.T @ grad_v
    a_mat, b_vec = constraint_rows(j_v, j_i, theta, u, xi.nu, xi.iota, cfg.beta)
    sol = solver.solve(QpProblem(g=g_vec, a_matrix=a_mat, b=b_vec))
    if sol.status == "infeasible":
        raise ControllerFaultError("exact flow evaluation: safety QP infeasible",
                                   snapshot={"u": np.array(u)})
    return sol.z


def linearized_kkt_stationarity(lm: LinearModel, theta: ThetaVector, u: np.ndarray,
                                xi: GridState, cfg: SgfConfig,
                                solver: DualActiveSetSolver | None = None) -> float:
    """Max-norm stationarity residual of the linearized OPF at u.

    At a flow equilibrium the QP returns z = 0 and its optimality system
    coincides with the KKT conditions of the linearized problem (multipliers
    lam/2), so grad + A^T lam / 2 vanishes there.
    """
    solver = solver or DualActiveSetSolver()
    prob = assemble_qp(lm, theta, u, xi, cfg)
    sol = solver.solve(prob)
    if sol.status != STATUS_OPTIMAL:
        return float("inf")
    grad = prob.g
    residual = grad + 0.5 * (prob.a_matrix.T @ sol.duals)
    return float(np.abs(residual).max())
