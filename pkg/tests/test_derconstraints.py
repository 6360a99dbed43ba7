"""Inverter feasible sets: constraint values, Jacobians, projection.

The projection is held against a dense grid-search oracle for minimal
distance, and checked for idempotence, non-expansiveness, and exact
feasibility. Membership via the constraint vector is cross-checked with
rejection sampling.
"""

import numpy as np
import pytest

from gridflow.derconstraints import (
    DerParams,
    InfeasibleSetError,
    ThetaVector,
    ell,
    ell_jacobian,
    is_feasible,
    project_control,
    project_setpoint,
)


def test_origin_boundary_case():
    v = ell(DerParams(s_n=1.0, p_max=0.5), 0.0, 0.0)
    assert np.allclose(v, [-1.0, -0.5, 0.0, -0.44, -0.44])
    assert (v <= 0).all()


def test_p_max_breach_detected():
    v = ell(DerParams(s_n=1.0, p_max=0.5), 1.0, 0.0)
    assert v[1] == pytest.approx(0.5)
    assert not (v <= 0).all()


def test_q_box_hits_zero_at_fraction_of_rating():
    der = DerParams(s_n=0.49, p_max=0.3)
    v = ell(der, 0.1, 0.44 * 0.49)
    assert v[4] == pytest.approx(0.0, abs=1e-15)
    v = ell(der, 0.1, -0.44 * 0.49)
    assert v[3] == pytest.approx(0.0, abs=1e-15)


def test_jacobian_at_origin_and_analytic_point():
    der = DerParams(s_n=1.0, p_max=0.5)
    j = ell_jacobian(der, 0.0, 0.0)
    assert np.allclose(j[0], [0.0, 0.0])
    j = ell_jacobian(der, 0.3, 0.4)
    assert np.allclose(j[0], [0.6, 0.8])
    assert np.allclose(j[1:], [[1, 0], [-1, 0], [0, -1], [0, 1]])


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        der = DerParams(s_n=rng.uniform(0.3, 1.2), p_max=rng.uniform(0.0, 1.0))
        p, q = rng.uniform(-1, 1, 2)
        j = ell_jacobian(der, p, q)
        fd = np.column_stack([
            (ell(der, p + h, q) - ell(der, p - h, q)) / (2 * h),
            (ell(der, p, q + h) - ell(der, p, q - h)) / (2 * h),
        ])
        worst = max(worst, np.abs(j - fd).max())
    assert worst < 1e-8


def test_membership_equivalence_by_rejection_sampling():
    rng = np.random.default_rng(1)
    der = DerParams(s_n=0.8, p_max=0.6, q_frac=0.44)
    qb = 0.44 * 0.8
    for _ in range(500):
        p, q = rng.uniform(-1.2, 1.2, 2)
        direct = (0 <= p <= 0.6) and (-qb <= q <= qb) and (p * p + q * q <= 0.64)
        assert is_feasible(der, p, q) == direct


def test_projection_identity_on_feasible_points():
    rng = np.random.default_rng(2)
    der = DerParams(s_n=1.0, p_max=0.7)
    for _ in range(50):
        p = rng.uniform(0, 0.7)
        q = rng.uniform(-0.44, 0.44)
        if not is_feasible(der, p, q):
            continue
        pp, qq = project_setpoint(der, p, q)
        assert (pp, qq) == pytest.approx((p, q), abs=1e-14)


def test_projection_box_active_case():
    pp, qq = project_setpoint(DerParams(s_n=1.0, p_max=0.5), 2.0, 0.0)
    assert (pp, qq) == pytest.approx((0.5, 0.0))


def test_projection_feasible_and_minimal_vs_grid():
    """Random infeasible points land feasible and at grid-oracle distance."""
    rng = np.random.default_rng(3)
    for trial in range(40):
        der = DerParams(s_n=rng.uniform(0.4, 1.0), p_max=rng.uniform(0.0, 1.0))
        x = rng.uniform(-1.5, 1.5, 2)
        if is_feasible(der, x[0], x[1]):
            continue
        y = np.array(project_setpoint(der, x[0], x[1]))
        assert (ell(der, y[0], y[1]) <= 1e-12).all()
        # dense feasible grid
        qb = der.q_frac * der.s_n
        ps = np.linspace(0.0, min(der.p_max, der.s_n), 220)
        qs = np.linspace(-qb, qb, 220)
        pg, qg = np.meshgrid(ps, qs)
        mask = pg**2 + qg**2 <= der.s_n**2
        d_grid = np.sqrt((pg[mask] - x[0]) ** 2 + (qg[mask] - x[1]) ** 2).min()
        d_proj = np.linalg.norm(y - x)
        assert d_proj <= d_grid + 1e-3


def test_projection_idempotent_and_nonexpansive():
    rng = np.random.default_rng(4)
    der = DerParams(s_n=0.74, p_max=0.6)
    for _ in range(100):
        a = rng.uniform(-2, 2, 2)
        b = rng.uniform(-2, 2, 2)
        pa = np.array(project_setpoint(der, *a))
        pb = np.array(project_setpoint(der, *b))
        paa = np.array(project_setpoint(der, *pa))
        assert np.allclose(paa, pa, atol=1e-10)
        assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


def test_projection_corner_against_kkt():
    """Disk and box both active: land on the arc at the q bound."""
    der = DerParams(s_n=1.0, p_max=1.0, q_frac=0.44)
    pp, qq = project_setpoint(der, 1.2, 0.6)
    assert qq == pytest.approx(0.44, abs=1e-9)
    assert pp == pytest.approx(np.sqrt(1 - 0.44**2), abs=1e-9)


def test_empty_set_rejected():
    with pytest.raises(InfeasibleSetError):
        project_setpoint(DerParams(s_n=1.0, p_max=-0.1), 0.5, 0.0)


def test_project_control_layout(theta_base):
    g = theta_base.der_count
    theta = theta_base.with_p_max(np.full(g, 0.3))
    u = np.concatenate([np.full(g, 2.0), np.full(g, -2.0)])
    out = project_control(theta, u)
    assert np.allclose(out[:g], 0.3)
    assert (out[g:] >= -0.44 * np.array([d.s_n for d in theta.ders]) - 1e-12).all()


def test_theta_validation():
    with pytest.raises(ValueError):
        ThetaVector([DerParams(1.0, 0.5)], v_lower=1.05, v_upper=0.95, i_upper=1.0)
    with pytest.raises(ValueError):
        DerParams(s_n=-1.0, p_max=0.5)
    with pytest.raises(ValueError):
        DerParams(s_n=1.0, p_max=0.5, q_frac=1.5)
