"""Closed-loop execution and the empirical validation harness.

The plant is always the nonlinear power-flow solver; controllers only ever see
measurements. One online step is: solve the plant at the applied setpoints,
measure (optionally with bounded noise), evaluate the controller map, Euler
step, clamp to the DER sets, advance the profiles. Offline runs hold the loads
fixed and iterate to a fixed point.

The no-control baseline models the inverter protection scheme: a plant trips
if its point-of-connection voltage exceeds 1.06 p.u. instantaneously, or if
the 10-minute RMS of 10-second samples exceeds 1.05 p.u.; it reconnects after
a uniformly random delay in [1, 10] minutes.

The harness half of the module turns the controller's guarantees into
measurements: inflated-bound invariance checking, exponential-plus-floor
convergence fits, and numerical estimation of the flow Jacobian's extreme
eigenvalues at an equilibrium.
"""

from __future__ import annotations

import csv
import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .derconstraints import ThetaVector, project_control
from .grid import LoadProfile, NetworkModel
from .powerflow import (
    LinearModel,
    NoiseSpec,
    PowerFlowError,
    line_currents,
    measure,
    solve_pf_fixed_point,
)
from .qpsolver import DualActiveSetSolver, STATUS_OPTIMAL
from .sgf import (
    ControllerFaultError,
    SgfConfig,
    exact_flow_velocity,
    flow_velocity,
    linearized_kkt_stationarity,
)
from .surrogate import MlpModel, forward

TRIP_INSTANT_PU = 1.06
TRIP_RMS_PU = 1.05
RMS_WINDOW_S = 600.0
RECONNECT_MIN_S = 60.0
RECONNECT_MAX_S = 600.0


class SimulationAbort(RuntimeError):
    """Plant or controller failure mid-run; carries the trace collected so far."""

    def __init__(self, msg, trace, cause=None):
        super().__init__(msg)
        self.trace = trace
        self.cause = cause


# ---------------------------------------------------------------------------
# Controllers


class LinearSgfController:
    """QP safety filter on the fixed linear sensitivity model (tag SGF)."""

    tag = "SGF"

    def __init__(self, lm: LinearModel, cfg: SgfConfig):
        self.lm = lm
        self.cfg = cfg
        self.solver = DualActiveSetSolver()

    def control(self, u, xi, theta, loads=None):
        return flow_velocity(self.lm, theta, u, xi, self.cfg, self.solver)


class NnSgfController:
    """Trained surrogate of the QP map (tag NN-SGF)."""

    tag = "NN-SGF"

    def __init__(self, model: MlpModel, cfg: SgfConfig):
        self.model = model
        self.cfg = cfg

    def control(self, u, xi, theta, loads=None):
        return forward(self.model, u, xi, theta)


class ExactSgfController:
    """Ideal benchmark: true Jacobians recomputed at every step (tag EXACT-SGF)."""

    tag = "EXACT-SGF"

    def __init__(self, net: NetworkModel, cfg: SgfConfig, fd_step: float = 1e-5):
        self.net = net
        self.cfg = cfg
        self.fd_step = fd_step
        self.solver = DualActiveSetSolver()

    def control(self, u, xi, theta, loads=None):
        if loads is None:
            raise ValueError("the exact controller needs the load vector to differentiate the plant")
        return exact_flow_velocity(self.net, theta, u, loads, self.cfg, self.solver, fd_step=self.fd_step)


# ---------------------------------------------------------------------------
# Traces


@dataclass
class SimulationTrace:
    """Per-step closed-loop records; rows advance by exactly dt seconds."""

    controller: str
    dt: float
    t: np.ndarray
    u: np.ndarray
    v_all: np.ndarray
    iota: np.ndarray
    z: np.ndarray
    qp_status: np.ndarray
    viol_v: np.ndarray
    viol_i: np.ndarray
    wall: np.ndarray
    loads_p: np.ndarray
    loads_q: np.ndarray
    p_max: np.ndarray
    events: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None

    @property
    def n_steps(self) -> int:
        return self.t.size

    def mean_controller_seconds(self) -> float:
        return float(self.wall.mean()) if self.wall.size else float("nan")


class _TraceBuilder:
    def __init__(self, controller_tag, dt):
        self.controller = controller_tag
        self.dt = dt
        self.rows = {k: [] for k in ("t", "u", "v_all", "iota", "z", "qp_status",
                                     "viol_v", "viol_i", "wall", "loads_p", "loads_q", "p_max")}
        self.events = []

    def add(self, **kw):
        for k, v in kw.items():
            self.rows[k].append(v)

    def build(self, aborted=False, abort_reason=None) -> SimulationTrace:
        r = self.rows
        return SimulationTrace(
            controller=self.controller, dt=self.dt,
            t=np.array(r["t"]), u=np.array(r["u"]), v_all=np.array(r["v_all"]),
            iota=np.array(r["iota"]), z=np.array(r["z"]),
            qp_status=np.array(r["qp_status"], dtype=object),
            viol_v=np.array(r["viol_v"]), viol_i=np.array(r["viol_i"]),
            wall=np.array(r["wall"]),
            loads_p=np.array(r["loads_p"]), loads_q=np.array(r["loads_q"]),
            p_max=np.array(r["p_max"]),
            events=self.events, aborted=aborted, abort_reason=abort_reason,
        )


def _violations(theta: ThetaVector, nu_monitored, iota):
    viol_v = float(max(np.max(nu_monitored - theta.v_upper, initial=-np.inf),
                       np.max(theta.v_lower - nu_monitored, initial=-np.inf), 0.0))
    viol_i = float(max(np.max(iota - theta.i_upper, initial=-np.inf), 0.0))
    return viol_v, viol_i


# ---------------------------------------------------------------------------
# Runners


def run_online(
    net: NetworkModel,
    controller,
    profile: LoadProfile,
    theta_base: ThetaVector,
    cfg: SgfConfig,
    start_step: int = 0,
    horizon_steps: int | None = None,
    noise: NoiseSpec | None = None,
    seed: int = 0,
    u0: np.ndarray | None = None,
) -> SimulationTrace:
    """Feedback loop against the profile: measure, evaluate, step, clamp.

    `cfg.dt` must equal the profile step; the controller map is timed in
    isolation (the wall column excludes plant solves and clamping).
    """
    if abs(cfg.dt - profile.dt) > 1e-9:
        raise ValueError(f"cfg.dt = {cfg.dt} must match the profile step {profile.dt}")
    horizon_steps = (profile.n_steps - start_step) if horizon_steps is None else horizon_steps
    if start_step + horizon_steps > profile.n_steps:
        raise ValueError("horizon extends past the end of the profile")
    g = theta_base.der_count
    u = np.zeros(2 * g) if u0 is None else np.array(u0, dtype=float)
    rng = np.random.default_rng(seed)
    tb = _TraceBuilder(controller.tag, profile.dt)

    for k in range(horizon_steps):
        row = start_step + k
        loads = profile.loads_at(row)
        p_max = profile.p_max[row]
        theta = theta_base.with_p_max(p_max)
        u = project_control(theta, u)  # availability may have dropped below p
        try:
            pf = solve_pf_fixed_point(net, u, loads)
            xi = measure(net, pf, noise=noise, rng=rng)
            started = time.perf_counter()
            z = controller.control(u, xi, theta, loads)
            wall = time.perf_counter() - started
        except (PowerFlowError, ControllerFaultError) as exc:
            raise SimulationAbort(f"step {k}: {exc}", tb.build(aborted=True, abort_reason=str(exc)), cause=exc)
        viol_v, viol_i = _violations(theta, xi.nu, xi.iota)
        tb.add(t=float(profile.t[row]), u=u.copy(), v_all=np.abs(pf.v), iota=xi.iota,
               z=np.asarray(z, dtype=float), qp_status=STATUS_OPTIMAL,
               viol_v=viol_v, viol_i=viol_i, wall=wall,
               loads_p=loads.real.copy(), loads_q=loads.imag.copy(), p_max=p_max.copy())
        u = project_control(theta, u + cfg.eta * cfg.dt * np.asarray(z, dtype=float))
    return tb.build()


def run_offline(
    net: NetworkModel,
    controller,
    theta: ThetaVector,
    loads: np.ndarray,
    u0: np.ndarray,
    cfg: SgfConfig,
    tol: float = 0.05,
    max_steps: int = 200,
    lm: LinearModel | None = None,
) -> tuple[SimulationTrace, bool, float]:
    """Fixed-load iteration to convergence or budget.

    Convergence is declared when the post-clamp step length satisfies
    ||u_next - u|| <= tol * eta * dt. Returns (trace, converged, stationarity),
    where stationarity is the linearized-KKT residual at the final point when
    a linear model is supplied (NaN otherwise).
    """
    u = np.array(u0, dtype=float)
    tb = _TraceBuilder(controller.tag, cfg.dt)
    converged = False
    loads = np.asarray(loads, dtype=complex)
    for k in range(max_steps):
        try:
            pf = solve_pf_fixed_point(net, u, loads)
            xi = measure(net, pf)
            started = time.perf_counter()
            z = np.asarray(controller.control(u, xi, theta, loads), dtype=float)
            wall = time.perf_counter() - started
        except (PowerFlowError, ControllerFaultError) as exc:
            raise SimulationAbort(f"iteration {k}: {exc}", tb.build(aborted=True, abort_reason=str(exc)), cause=exc)
        viol_v, viol_i = _violations(theta, xi.nu, xi.iota)
        tb.add(t=k * cfg.dt, u=u.copy(), v_all=np.abs(pf.v), iota=xi.iota, z=z,
               qp_status=STATUS_OPTIMAL, viol_v=viol_v, viol_i=viol_i, wall=wall,
               loads_p=loads.real.copy(), loads_q=loads.imag.copy(),
               p_max=np.array([d.p_max for d in theta.ders]))
        u_next = project_control(theta, u + cfg.eta * cfg.dt * z)
        step_len = float(np.linalg.norm(u_next - u))
        u = u_next
        if step_len <= tol * cfg.eta * cfg.dt:
            converged = True
            break
    trace = tb.build()
    stationarity = float("nan")
    if lm is not None:
        pf = solve_pf_fixed_point(net, u, loads)
        xi = measure(net, pf)
        stationarity = linearized_kkt_stationarity(lm, theta, u, xi, cfg)
    return trace, converged, stationarity


class ProtectionRelay:
    """CENELEC-style disconnection logic for one plant.

    Rule 1: instantaneous trip above 1.06 p.u. at the point of connection.
    Rule 2: trip when the RMS of the last 10 minutes of 10-second samples
    exceeds 1.05 p.u. (evaluated only once the window is full). Reconnection
    happens after a uniformly random delay in [1, 10] minutes.
    """

    def __init__(self, dt: float, rng: np.random.Generator):
        self.dt = dt
        self.rng = rng
        self.connected = True
        self.reconnect_at: int | None = None
        self.window = deque(maxlen=max(1, int(round(RMS_WINDOW_S / dt))))

    def update(self, step: int, v_mag: float) -> str | None:
        """Feed one voltage sample; returns an event label or None."""
        self.window.append(v_mag)
        if self.connected:
            if v_mag > TRIP_INSTANT_PU:
                return self._trip(step, "trip_instant")
            if len(self.window) == self.window.maxlen:
                rms = float(np.sqrt(np.mean(np.square(self.window))))
                if rms > TRIP_RMS_PU:
                    return self._trip(step, "trip_rms")
            return None
        if self.reconnect_at is not None and step >= self.reconnect_at:
            self.connected = True
            self.reconnect_at = None
            return "reconnect"
        return None

    def _trip(self, step: int, label: str) -> str:
        self.connected = False
        delay = self.rng.uniform(RECONNECT_MIN_S, RECONNECT_MAX_S)
        self.reconnect_at = step + int(np.ceil(delay / self.dt))
        return label


def run_no_control(
    net: NetworkModel,
    profile: LoadProfile,
    theta_base: ThetaVector,
    start_step: int = 0,
    horizon_steps: int | None = None,
    seed: int = 0,
) -> SimulationTrace:
    """Protection-only baseline: plants inject p_max at unity power factor."""
    horizon_steps = (profile.n_steps - start_step) if horizon_steps is None else horizon_steps
    if start_step + horizon_steps > profile.n_steps:
        raise ValueError("horizon extends past the end of the profile")
    g = theta_base.der_count
    rng = np.random.default_rng(seed)
    relays = [ProtectionRelay(profile.dt, rng) for _ in range(g)]
    placement = net.placement
    tb = _TraceBuilder("NO-CONTROL", profile.dt)

    for k in range(horizon_steps):
        row = start_step + k
        loads = profile.loads_at(row)
        p_max = profile.p_max[row]
        status = np.array([r.connected for r in relays])
        u = np.concatenate([np.where(status, p_max, 0.0), np.zeros(g)])
        try:
            pf = solve_pf_fixed_point(net, u, loads)
        except PowerFlowError as exc:
            raise SimulationAbort(f"step {k}: {exc}", tb.build(aborted=True, abort_reason=str(exc)), cause=exc)
        v_all = np.abs(pf.v)
        theta = theta_base.with_p_max(p_max)
        nu = v_all[net.monitored_nodes - 1]
        iota = np.abs(line_currents(net, pf.v))
        viol_v, viol_i = _violations(theta, nu, iota)
        tb.add(t=float(profile.t[row]), u=u, v_all=v_all, iota=iota, z=np.zeros(2 * g),
               qp_status="n/a", viol_v=viol_v, viol_i=viol_i, wall=0.0,
               loads_p=loads.real.copy(), loads_q=loads.imag.copy(), p_max=p_max.copy())
        for i, relay in enumerate(relays):
            event = relay.update(k, float(v_all[placement[i] - 1]))
            if event:
                tb.events.append({"step": k, "t": float(profile.t[row]), "der": i, "event": event})
    return tb.build()


# ---------------------------------------------------------------------------
# Metrics and theory checks


@dataclass
class OvervoltageMetrics:
    """Counts and durations of voltage-limit excursions across all nodes."""

    node_steps_over: int
    max_duration_s: float
    mean_duration_s: float
    max_excursion: float

    def to_dict(self) -> dict:
        return {
            "node_steps_over": self.node_steps_over,
            "max_duration_s": self.max_duration_s,
            "mean_duration_s": self.mean_duration_s,
            "max_excursion": self.max_excursion,
        }


def overvoltage_metrics(trace: SimulationTrace, v_upper: float) -> OvervoltageMetrics:
    """Scan every node's series for contiguous runs above the limit."""
    over = trace.v_all > v_upper
    durations = []
    for node in range(trace.v_all.shape[1]):
        run = 0
        for flag in over[:, node]:
            if flag:
                run += 1
            elif run:
                durations.append(run * trace.dt)
                run = 0
        if run:
            durations.append(run * trace.dt)
    excursion = float(np.max(trace.v_all - v_upper, initial=0.0))
    return OvervoltageMetrics(
        node_steps_over=int(over.sum()),
        max_duration_s=float(max(durations, default=0.0)),
        mean_duration_s=float(np.mean(durations)) if durations else 0.0,
        max_excursion=max(excursion, 0.0),
    )


@dataclass
class TheoryEstimates:
    """Measured error magnitudes and the inflated bounds they imply."""

    e_v: float
    e_i: float
    e_jv: float
    e_ji: float
    e_nn: float
    eps_v: float
    eps_i: float
    gamma_v_norm: float
    gamma_i_norm: float
    beta: float
    v_lower: float
    v_upper: float
    i_upper: float
    v_lower_eff: float = field(init=False)
    v_upper_eff: float = field(init=False)
    i_upper_eff: float = field(init=False)
    e1: float | None = None
    e2: float | None = None
    rate: float | None = None
    asymptotic_error: float | None = None

    def __post_init__(self):
        inflation_v = self.eps_v + 2.0 * self.e_v + self.gamma_v_norm * self.e_nn / self.beta
        inflation_i = self.eps_i + 2.0 * self.e_i + self.gamma_i_norm * self.e_nn / self.beta
        self.v_lower_eff = self.v_lower - inflation_v
        self.v_upper_eff = self.v_upper + inflation_v
        self.i_upper_eff = self.i_upper + inflation_i
        if not (self.v_lower_eff <= self.v_lower < self.v_upper <= self.v_upper_eff):
            raise ValueError("inflated bounds must bracket the raw bounds")

    def voltage_inflation(self) -> float:
        return self.v_upper_eff - self.v_upper

    def asymptotic_radius(self, epsilon: float, s: float = 0.5) -> float:
        """Asymptotic-error floor estimate e2 * eps / (s * e1^2) from measured pieces."""
        if self.e1 is None or self.e2 is None or self.e1 <= 0:
            return float("nan")
        return self.e2 * epsilon / (s * self.e1**2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "e_v", "e_i", "e_jv", "e_ji", "e_nn", "eps_v", "eps_i",
            "gamma_v_norm", "gamma_i_norm", "beta",
            "v_lower", "v_upper", "i_upper",
            "v_lower_eff", "v_upper_eff", "i_upper_eff",
            "e1", "e2", "rate", "asymptotic_error",
        )}


def make_theory_estimates(lm: LinearModel, theta: ThetaVector, beta: float,
                          e_nn: float = 0.0, noise: NoiseSpec | None = None) -> TheoryEstimates:
    if lm.error_bounds is None:
        raise ValueError("linear model carries no measured error bounds")
    bounds = lm.error_bounds
    noise = noise or NoiseSpec()
    return TheoryEstimates(
        e_v=bounds.e_v, e_i=bounds.e_i, e_jv=bounds.e_jv, e_ji=bounds.e_ji,
        e_nn=e_nn, eps_v=noise.eps_v, eps_i=noise.eps_i,
        gamma_v_norm=lm.gamma_v_norm, gamma_i_norm=lm.gamma_i_norm, beta=beta,
        v_lower=theta.v_lower, v_upper=theta.v_upper, i_upper=theta.i_upper,
    )


@dataclass
class InvarianceReport:
    passed: bool
    n_steps: int
    violations_upper: int
    violations_lower: int
    violations_current: int
    min_margin_upper: float
    min_margin_lower: float
    min_margin_current: float
    max_raw_violation_v: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "passed", "n_steps", "violations_upper", "violations_lower",
            "violations_current", "min_margin_upper", "min_margin_lower",
            "min_margin_current", "max_raw_violation_v",
        )}


def check_invariance(trace: SimulationTrace, theory: TheoryEstimates,
                     monitored_nodes: np.ndarray) -> InvarianceReport:
    """Verify every trace point stays inside the inflated bounds."""
    nu = trace.v_all[:, monitored_nodes - 1]
    up = nu - theory.v_upper_eff
    lo = theory.v_lower_eff - nu
    cur = trace.iota - theory.i_upper_eff
    n_up = int((up > 0).sum())
    n_lo = int((lo > 0).sum())
    n_cur = int((cur > 0).sum())
    return InvarianceReport(
        passed=(n_up == 0 and n_lo == 0 and n_cur == 0),
        n_steps=trace.n_steps,
        violations_upper=n_up,
        violations_lower=n_lo,
        violations_current=n_cur,
        min_margin_upper=float(-up.max(initial=-np.inf)),
        min_margin_lower=float(-lo.max(initial=-np.inf)),
        min_margin_current=float(-cur.max(initial=-np.inf)) if trace.iota.size else float("inf"),
        max_raw_violation_v=float(np.max(nu - theory.v_upper, initial=0.0)),
    )


@dataclass
class ConvergenceFit:
    rate: float
    asymptotic_error: float
    r_squared: float
    degenerate: bool
    n_transient: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("rate", "asymptotic_error", "r_squared", "degenerate", "n_transient")}


def fit_convergence(t: np.ndarray, distances: np.ndarray,
                    floor_fraction: float = 0.25, cutoff: float = 0.05) -> ConvergenceFit:
    """Exponential-plus-floor fit of a distance-to-equilibrium series.

    The floor is the mean of the last `floor_fraction` of samples; the
    transient window keeps points whose excess over the floor is at least
    `cutoff` of the initial excess, and the rate comes from a log-linear least
    squares fit there. Flat series come back flagged degenerate, not fitted.
    """
    t = np.asarray(t, dtype=float)
    d = np.asarray(distances, dtype=float)
    if d.size < 8:
        return ConvergenceFit(rate=0.0, asymptotic_error=float(d[-1]) if d.size else float("nan"),
                              r_squared=0.0, degenerate=True, n_transient=0)
    n_floor = max(2, int(round(floor_fraction * d.size)))
    floor = float(d[-n_floor:].mean())
    excess0 = d[0] - floor
    if excess0 <= max(1e-12, 10.0 * np.finfo(float).eps * max(1.0, floor)):
        return ConvergenceFit(rate=0.0, asymptotic_error=floor, r_squared=0.0,
                              degenerate=True, n_transient=0)
    mask = (d - floor) >= cutoff * excess0
    # keep only the leading contiguous transient
    first_false = np.argmin(mask) if not mask.all() else mask.size
    mask[first_false:] = False
    n_tr = int(mask.sum())
    if n_tr < 4:
        return ConvergenceFit(rate=0.0, asymptotic_error=floor, r_squared=0.0,
                              degenerate=True, n_transient=n_tr)
    tt = t[mask]
    yy = np.log(d[mask] - floor)
    a = np.vstack([np.ones_like(tt), tt]).T
    coef, *_ = np.linalg.lstsq(a, yy, rcond=None)
    pred = a @ coef
    ss_res = float(((yy - pred) ** 2).sum())
    ss_tot = float(((yy - yy.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ConvergenceFit(rate=float(-coef[1]), asymptotic_error=floor, r_squared=r2,
                          degenerate=False, n_transient=n_tr)


def estimate_flow_jacobian_eigs(net: NetworkModel, theta: ThetaVector, loads: np.ndarray,
                                u_star: np.ndarray, cfg: SgfConfig,
                                fd_step: float = 1e-5) -> tuple[float, float]:
    """(e1, e2) = (-max, -min) eigenvalue of the symmetrized flow Jacobian at u_star.

    The flow map is the ideal controller composed with the plant; columns come
    from central differences. Active-set changes inside the stencil make this
    an estimate, which is all the convergence checks need.
    """
    n = u_star.size
    jac = np.empty((n, n))
    solver = DualActiveSetSolver()
    for col in range(n):
        up = u_star.copy()
        up[col] += fd_step
        um = u_star.copy()
        um[col] -= fd_step
        fp = exact_flow_velocity(net, theta, up, loads, cfg, solver)
        fm = exact_flow_velocity(net, theta, um, loads, cfg, solver)
        jac[:, col] = (fp - fm) / (2.0 * fd_step)
    sym = 0.5 * (jac + jac.T)
    eigs = np.linalg.eigvalsh(sym)
    return float(-eigs.max()), float(-eigs.min())


# ---------------------------------------------------------------------------
# Trace serialization

TRACE_SCHEMA_NOTE = (
    "one row per step; u/z columns follow the [p_1..p_G, q_1..q_G] layout; "
    "v columns are all-node magnitudes; i columns are monitored-line magnitudes; "
    "controller wall-clock lives in the metrics JSON, not here, so reruns are byte-identical"
)


def trace_header(n_ders: int, n_nodes: int, n_lines: int) -> list[str]:
    g2 = 2 * n_ders
    return (
        ["t"]
        + [f"u_{i}" for i in range(1, g2 + 1)]
        + [f"v_{i}" for i in range(1, n_nodes + 1)]
        + [f"i_{i}" for i in range(1, n_lines + 1)]
        + [f"z_{i}" for i in range(1, g2 + 1)]
        + ["qp_status", "viol_v", "viol_i"]
    )


def save_trace_csv(trace: SimulationTrace, path) -> None:
    g2 = trace.u.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(trace_header(g2 // 2, trace.v_all.shape[1], trace.iota.shape[1]))
        for k in range(trace.n_steps):
            row = [f"{trace.t[k]:.10g}"]
            row += [f"{v:.17g}" for v in trace.u[k]]
            row += [f"{v:.17g}" for v in trace.v_all[k]]
            row += [f"{v:.17g}" for v in trace.iota[k]]
            row += [f"{v:.17g}" for v in trace.z[k]]
            row += [str(trace.qp_status[k]), f"{trace.viol_v[k]:.17g}", f"{trace.viol_i[k]:.17g}"]
            writer.writerow(row)


def save_trace_schema(trace: SimulationTrace, path) -> None:
    doc = {
        "controller": trace.controller,
        "dt": trace.dt,
        "columns": trace_header(trace.u.shape[1] // 2, trace.v_all.shape[1], trace.iota.shape[1]),
        "note": TRACE_SCHEMA_NOTE,
        "events": trace.events,
        "aborted": trace.aborted,
        "abort_reason": trace.abort_reason,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
