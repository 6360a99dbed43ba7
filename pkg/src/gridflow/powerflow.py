"""Nonlinear power flow, the measurement map, and the linear sensitivity model.

The power-flow equation over the non-substation nodes, with net injections
s = (p - p_l) + j (q - q_l), reads

    s = diag(v) (conj(ybar) conj(v0) + conj(Y) conj(v)).

Two solvers are provided: the Z-bus fixed point (production path) and a full
Newton-Raphson on the real/imaginary mismatch, which exists purely as an
independent cross-check. Both target the *practical* solution branch: any
iterate whose voltage magnitude leaves (0.5, 1.5) p.u. aborts rather than
converging to a low-voltage artifact.

The measurement map stacks monitored voltage magnitudes and sending-end line
current magnitudes; the linear model |v| ~ Gamma_v u + v_bar (and likewise for
currents) is built from central finite differences at a nominal operating
point, with empirical error bounds measured over a sampled box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import NetworkModel, net_injection

PRACTICAL_V_LO = 0.5
PRACTICAL_V_HI = 1.5


class PowerFlowError(RuntimeError):
    pass


class PowerFlowDivergedError(PowerFlowError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class LeftPracticalBranchError(PowerFlowError):
    """An iterate left the (0.5, 1.5) p.u. neighborhood of the nominal profile."""


class SingularJacobianError(PowerFlowError):
    pass


@dataclass
class PfSolution:
    """Complex node voltages plus convergence metadata."""

    v: np.ndarray
    converged: bool
    iterations: int
    residual: float


@dataclass
class NoiseSpec:
    """Per-entry bounds of the additive measurement perturbation."""

    eps_v: float = 0.0
    eps_i: float = 0.0

    def __post_init__(self):
        if self.eps_v < 0 or self.eps_i < 0:
            raise ValueError("noise bounds must be nonnegative")


@dataclass
class GridState:
    """Measurement stack xi = (nu, iota) at monitored nodes/lines."""

    nu: np.ndarray
    iota: np.ndarray
    noise: NoiseSpec | None = None

    @property
    def xi(self) -> np.ndarray:
        return np.concatenate([self.nu, self.iota])


def pf_residual(net: NetworkModel, v: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Complex mismatch of the power-flow equation at voltages v."""
    return v * (np.conj(net.ybar) * np.conj(net.v0) + np.conj(net.y_matrix) @ np.conj(v)) - s


def _check_practical(v: np.ndarray) -> None:
    mags = np.abs(v)
    if (mags <= PRACTICAL_V_LO).any() or (mags >= PRACTICAL_V_HI).any():
        raise LeftPracticalBranchError(
            f"voltage magnitudes left ({PRACTICAL_V_LO}, {PRACTICAL_V_HI}) p.u.: "
            f"range [{mags.min():.3f}, {mags.max():.3f}]"
        )


def solve_pf_fixed_point(
    net: NetworkModel,
    u: np.ndarray,
    loads: np.ndarray,
    v_init: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> PfSolution:
    """Z-bus fixed point: v <- Y^-1 (conj(s)/conj(v) - ybar v0)."""
    s = net_injection(u, loads, net.placement, net.node_count)
    v = np.full(net.node_count, net.v0, dtype=complex) if v_init is None else np.asarray(v_init, dtype=complex).copy()
    ybar_v0 = net.ybar * net.v0
    res = float(np.abs(pf_residual(net, v, s)).max())
    it = 0
    while res > tol and it < max_iter:
        v = net.y_inv @ (np.conj(s) / np.conj(v) - ybar_v0)
        _check_practical(v)
        res = float(np.abs(pf_residual(net, v, s)).max())
        it += 1
    if res > tol:
        raise PowerFlowDivergedError(f"fixed point not converged after {it} iterations, residual {res:.3e}", residual=res)
    return PfSolution(v=v, converged=True, iterations=it, residual=res)


def solve_pf_newton(
    net: NetworkModel,
    u: np.ndarray,
    loads: np.ndarray,
    v_init: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 50,
) -> PfSolution:
    """Newton-Raphson on the stacked real/imaginary mismatch (oracle solver).

    With w = conj(ybar) conj(v0) + conj(Y) conj(v), the complex mismatch is
    r_n = v_n w_n - s_n and its Wirtinger-style derivatives give
    dr/dRe(v) = diag(w) + diag(v) conj(Y), dr/dIm(v) = j diag(w) - j diag(v) conj(Y).
    """
    s = net_injection(u, loads, net.placement, net.node_count)
    n = net.node_count
    v = np.full(n, net.v0, dtype=complex) if v_init is None else np.asarray(v_init, dtype=complex).copy()
    y_conj = np.conj(net.y_matrix)
    it = 0
    res = float(np.abs(pf_residual(net, v, s)).max())
    while res > tol and it < max_iter:
        w = np.conj(net.ybar) * np.conj(net.v0) + y_conj @ np.conj(v)
        d_re = np.diag(w) + v[:, None] * y_conj
        d_im = 1j * np.diag(w) - 1j * (v[:, None] * y_conj)
        jac = np.block([[d_re.real, d_im.real], [d_re.imag, d_im.imag]])
        r = pf_residual(net, v, s)
        rhs = -np.concatenate([r.real, r.imag])
        try:
            dx = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Newton Jacobian at iteration {it}") from exc
        v = v + dx[:n] + 1j * dx[n:]
        _check_practical(v)
        res = float(np.abs(pf_residual(net, v, s)).max())
        it += 1
    if res > tol:
        raise PowerFlowDivergedError(f"Newton not converged after {it} iterations, residual {res:.3e}", residual=res)
    return PfSolution(v=v, converged=True, iterations=it, residual=res)


def line_currents(net: NetworkModel, v: np.ndarray, line_ids=None) -> np.ndarray:
    """Sending-end complex current of each requested line under the Pi-model."""
    ids = net.monitored_lines if line_ids is None else np.asarray(line_ids, dtype=int)
    out = np.empty(ids.size, dtype=complex)
    for k, idx in enumerate(ids):
        ln = net.lines[idx]
        vf = net.v0 if ln.from_node == 0 else v[ln.from_node - 1]
        vt = net.v0 if ln.to_node == 0 else v[ln.to_node - 1]
        out[k] = (vf - vt) / ln.z_series + vf * ln.y_shunt_half
    return out


def all_voltage_magnitudes(net: NetworkModel, pf: PfSolution) -> np.ndarray:
    return np.abs(pf.v)


def measure(
    net: NetworkModel,
    pf: PfSolution,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> GridState:
    """Stack monitored |v| and |i|, optionally perturbed by bounded uniform noise."""
    if not pf.converged:
        raise PowerFlowError("refusing to measure an unconverged power-flow solution")
    nu = np.abs(pf.v[net.monitored_nodes - 1])
    iota = np.abs(line_currents(net, pf.v))
    if noise is not None and (noise.eps_v > 0 or noise.eps_i > 0):
        if rng is None:
            raise ValueError("a seeded Generator is required when noise bounds are positive")
        nu = nu + rng.uniform(-noise.eps_v, noise.eps_v, size=nu.size)
        iota = iota + rng.uniform(-noise.eps_i, noise.eps_i, size=iota.size)
    return GridState(nu=nu, iota=iota, noise=noise)


@dataclass
class LinearModelErrorBounds:
    """Empirical worst-case deviations over the validation box (2-norms)."""

    e_v: float
    e_i: float
    e_jv: float
    e_ji: float
    box_radius: float
    n_samples: int


@dataclass
class LinearModel:
    """Affine sensitivity model |v| ~ Gamma_v u + v_bar, |i| ~ Gamma_i u + i_bar."""

    gamma_v: np.ndarray
    gamma_i: np.ndarray
    v_bar: np.ndarray
    i_bar: np.ndarray
    base_u: np.ndarray
    base_loads: np.ndarray
    error_bounds: LinearModelErrorBounds | None = None
    gamma_v_norm: float = field(init=False, default=0.0)
    gamma_i_norm: float = field(init=False, default=0.0)

    def __post_init__(self):
        for name in ("gamma_v", "gamma_i", "v_bar", "i_bar"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"linear model field {name} has non-finite entries")
        self.gamma_v_norm = float(np.linalg.norm(self.gamma_v, 2))
        self.gamma_i_norm = float(np.linalg.norm(self.gamma_i, 2)) if self.gamma_i.size else 0.0


def linear_predict(lm: LinearModel, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    return lm.gamma_v @ u + lm.v_bar, lm.gamma_i @ u + lm.i_bar


def measurement_jacobians(
    net: NetworkModel,
    u: np.ndarray,
    loads: np.ndarray,
    fd_step: float = 1e-4,
    pf_tol: float = 1e-11,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference Jacobians of u -> |v|_monitored and u -> |i|_monitored."""
    u = np.asarray(u, dtype=float)
    n_u = u.size
    m = net.monitored_nodes.size
    n_l = net.monitored_lines.size
    j_v = np.empty((m, n_u))
    j_i = np.empty((n_l, n_u))
    for col in range(n_u):
        up = u.copy()
        up[col] += fd_step
        um = u.copy()
        um[col] -= fd_step
        pf_p = solve_pf_fixed_point(net, up, loads, tol=pf_tol)
        pf_m = solve_pf_fixed_point(net, um, loads, tol=pf_tol)
        nu_p = np.abs(pf_p.v[net.monitored_nodes - 1])
        nu_m = np.abs(pf_m.v[net.monitored_nodes - 1])
        j_v[:, col] = (nu_p - nu_m) / (2.0 * fd_step)
        j_i[:, col] = (np.abs(line_currents(net, pf_p.v)) - np.abs(line_currents(net, pf_m.v))) / (2.0 * fd_step)
    return j_v, j_i


def build_linear_model(
    net: NetworkModel,
    base_u: np.ndarray,
    base_loads: np.ndarray,
    fd_step: float = 1e-4,
    box_radius: float = 0.1,
    n_samples: int = 64,
    n_jacobian_samples: int = 8,
    seed: int = 0,
    pf_tol: float = 1e-11,
) -> LinearModel:
    """Numerical sensitivity model at a nominal operating point.

    The offsets make the model exact at the base point. Error bounds are
    measured, not assumed: E_v / E_i are the worst 2-norm deviations of the
    affine prediction from the nonlinear map over `n_samples` points in a
    +-box_radius box around base_u, and E_Jv / E_Ji are the worst induced-norm
    deviations of the finite-difference Jacobians over a smaller subsample.
    """
    base_u = np.asarray(base_u, dtype=float)
    base_loads = np.asarray(base_loads, dtype=complex)
    pf0 = solve_pf_fixed_point(net, base_u, base_loads, tol=pf_tol)
    nu0 = np.abs(pf0.v[net.monitored_nodes - 1])
    iota0 = np.abs(line_currents(net, pf0.v))

    gamma_v, gamma_i = measurement_jacobians(net, base_u, base_loads, fd_step=fd_step, pf_tol=pf_tol)
    v_bar = nu0 - gamma_v @ base_u
    i_bar = iota0 - gamma_i @ base_u

    rng = np.random.default_rng(seed)
    e_v = e_i = e_jv = e_ji = 0.0
    for k in range(n_samples):
        # Alternate interior and corner draws: the affine-model error is
        # curvature-dominated, so its maximum over the box sits at corners.
        if k % 2 == 0:
            u = base_u + rng.uniform(-box_radius, box_radius, size=base_u.size)
        else:
            u = base_u + box_radius * rng.choice([-1.0, 1.0], size=base_u.size)
        pf = solve_pf_fixed_point(net, u, base_loads, tol=pf_tol)
        nu = np.abs(pf.v[net.monitored_nodes - 1])
        iota = np.abs(line_currents(net, pf.v))
        nu_hat = gamma_v @ u + v_bar
        iota_hat = gamma_i @ u + i_bar
        e_v = max(e_v, float(np.linalg.norm(nu - nu_hat)))
        e_i = max(e_i, float(np.linalg.norm(iota - iota_hat)))
        if k < n_jacobian_samples:
            j_v, j_i = measurement_jacobians(net, u, base_loads, fd_step=fd_step, pf_tol=pf_tol)
            e_jv = max(e_jv, float(np.linalg.norm(gamma_v - j_v, 2)))
            e_ji = max(e_ji, float(np.linalg.norm(gamma_i - j_i, 2)))

    bounds = LinearModelErrorBounds(e_v=e_v, e_i=e_i, e_jv=e_jv, e_ji=e_ji,
                                    box_radius=box_radius, n_samples=n_samples)
    return LinearModel(gamma_v=gamma_v, gamma_i=gamma_i, v_bar=v_bar, i_bar=i_bar,
                       base_u=base_u, base_loads=base_loads, error_bounds=bounds)
