"""Safe-gradient-flow AC OPF pursuit for distribution feeders.

A controller evaluates a per-step convex QP that filters the cost gradient
through barrier rows built from voltage/current measurements; a small
feedforward network learns the QP's solution map for cheap online evaluation.
The package covers the feeder model, power flow, the controller, dataset
generation and training, closed-loop simulation, and the empirical checks of
the feasibility/convergence guarantees.
"""

from .derconstraints import DerParams, ThetaVector, ell, ell_jacobian, project_setpoint
from .grid import DerSpec, Line, LoadProfile, NetworkModel, build_admittance, build_network, net_injection
from .powerflow import (
    GridState,
    LinearModel,
    NoiseSpec,
    PfSolution,
    build_linear_model,
    linear_predict,
    measure,
    solve_pf_fixed_point,
    solve_pf_newton,
)
from .qpsolver import DualActiveSetSolver, QpProblem, QpSolution, kkt_residual, solve_qp, solve_qp_oracle
from .sgf import CostSpec, SgfConfig, assemble_qp, cost_gradient, exact_sgf_step, sgf_step
from .sim import (
    ExactSgfController,
    LinearSgfController,
    NnSgfController,
    OvervoltageMetrics,
    SimulationTrace,
    TheoryEstimates,
    check_invariance,
    fit_convergence,
    overvoltage_metrics,
    run_no_control,
    run_offline,
    run_online,
)
from .surrogate import (
    ArchConfig,
    AdamConfig,
    Dataset,
    MlpModel,
    forward,
    generate_dataset,
    measure_nn_error,
    train,
)

__version__ = "0.1.0"
