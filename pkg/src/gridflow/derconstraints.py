"""Per-DER feasible sets as differentiable constraint functions.

Each inverter's admissible (p, q) region is the intersection of the rated-power
disk p^2 + q^2 <= s_n^2, the active-power interval 0 <= p <= p_max, and the
reactive-power box |q| <= q_frac * s_n. Membership is encoded as a length-5
vector of constraint values that are all <= 0 exactly on the set:

    [p^2 + q^2 - s_n^2,  p - p_max,  -p,  -q_frac*s_n - q,  q - q_frac*s_n]

The row order is fixed; the controller relies on it when stacking Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_ROWS = 5  # constraint rows per DER


class InfeasibleSetError(ValueError):
    """The parameterized set is empty (p_max < 0)."""


@dataclass(frozen=True)
class DerParams:
    """Time-varying inverter limits: rating, available active power, q box fraction."""

    s_n: float
    p_max: float
    q_frac: float = 0.44

    def __post_init__(self):
        if self.s_n <= 0:
            raise ValueError(f"s_n must be positive, got {self.s_n}")
        if not (0 < self.q_frac <= 1):
            raise ValueError(f"q_frac must lie in (0, 1], got {self.q_frac}")


@dataclass
class ThetaVector:
    """Full constraint parameterization: per-DER limits plus network-wide bounds."""

    ders: list[DerParams]
    v_lower: float
    v_upper: float
    i_upper: float

    def __post_init__(self):
        if not self.v_lower < self.v_upper:
            raise ValueError(f"need v_lower < v_upper, got {self.v_lower}, {self.v_upper}")
        if self.i_upper <= 0:
            raise ValueError(f"i_upper must be positive, got {self.i_upper}")

    @property
    def der_count(self) -> int:
        return len(self.ders)

    def with_p_max(self, p_max) -> "ThetaVector":
        """Same bounds, new per-DER available powers (used as profiles advance)."""
        p_max = np.asarray(p_max, dtype=float)
        ders = [DerParams(d.s_n, float(pm), d.q_frac) for d, pm in zip(self.ders, p_max)]
        return ThetaVector(ders, self.v_lower, self.v_upper, self.i_upper)


def ell(der: DerParams, p: float, q: float) -> np.ndarray:
    """Constraint value vector; all entries <= 0 iff (p, q) is admissible."""
    qb = der.q_frac * der.s_n
    return np.array(
        [
            p * p + q * q - der.s_n**2,
            p - der.p_max,
            -p,
            -qb - q,
            q - qb,
        ]
    )


def ell_jacobian(der: DerParams, p: float, q: float) -> np.ndarray:
    """d ell / d(p, q), shape (5, 2)."""
    return np.array(
        [
            [2.0 * p, 2.0 * q],
            [1.0, 0.0],
            [-1.0, 0.0],
            [0.0, -1.0],
            [0.0, 1.0],
        ]
    )


def is_feasible(der: DerParams, p: float, q: float, tol: float = 0.0) -> bool:
    return bool((ell(der, p, q) <= tol).all())


def project_setpoint(der: DerParams, p: float, q: float) -> tuple[float, float]:
    """Euclidean projection of (p, q) onto the disk-and-box set.

    The KKT system of the projection has a closed structure: coordinates are
    clamped to the box, and if the clamped point leaves the disk the only extra
    multiplier is the scalar mu on the disk row, with

        y(mu) = clamp((p, q) / (1 + 2 mu))  and  |y(mu)| = s_n.

    |y(mu)| is continuous and nonincreasing in mu, so the root is found by
    bisection; no iteration over constraint combinations is needed.
    """
    if der.p_max < 0:
        raise InfeasibleSetError(f"p_max = {der.p_max} < 0 leaves no admissible setpoint")
    qb = der.q_frac * der.s_n
    lo = np.array([0.0, -qb])
    hi = np.array([der.p_max, qb])
    x = np.array([p, q], dtype=float)

    def clamped(scale: float) -> np.ndarray:
        return np.minimum(np.maximum(x * scale, lo), hi)

    y = clamped(1.0)
    r2 = der.s_n**2
    if float(y @ y) <= r2 * (1.0 + 1e-14):
        return float(y[0]), float(y[1])

    # Bisection on mu >= 0; scale = 1/(1+2mu) in (0, 1].
    mu_lo, mu_hi = 0.0, 1.0
    while float(clamped(1.0 / (1.0 + 2.0 * mu_hi)) @ clamped(1.0 / (1.0 + 2.0 * mu_hi))) > r2:
        mu_hi *= 2.0
        if mu_hi > 1e18:  # pragma: no cover - |x| would have to be astronomically large
            break
    for _ in range(200):
        mu = 0.5 * (mu_lo + mu_hi)
        if float(clamped(1.0 / (1.0 + 2.0 * mu)) @ clamped(1.0 / (1.0 + 2.0 * mu))) > r2:
            mu_lo = mu
        else:
            mu_hi = mu
    y = clamped(1.0 / (1.0 + 2.0 * mu_hi))
    # Land exactly on or inside the disk; the box is preserved by the radial pull.
    norm = float(np.hypot(y[0], y[1]))
    if norm > der.s_n:
        y *= der.s_n / norm
    return float(y[0]), float(y[1])


def project_control(theta: ThetaVector, u: np.ndarray) -> np.ndarray:
    """Project each DER's (p_i, q_i) block of the stacked control vector."""
    g = theta.der_count
    out = np.array(u, dtype=float)
    for i, der in enumerate(theta.ders):
        out[i], out[g + i] = project_setpoint(der, float(u[i]), float(u[g + i]))
    return out
