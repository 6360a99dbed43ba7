"""Feeder model: admittance assembly, injections, profile I/O.

Covers the hand-computable admittance cases (single line, shunt accumulation,
3-node chain), permutation equivariance, zero row sums on shunt-free networks,
and the error paths (degenerate line, disconnected node, bad references).
"""

import numpy as np
import pytest

from gridflow.grid import (
    DegenerateLineError,
    DerSpec,
    DisconnectedNodeError,
    GridModelError,
    Line,
    LoadProfile,
    build_admittance,
    build_network,
    load_network,
    load_profile_csv,
    net_injection,
    save_network,
    save_profile_csv,
)


def test_single_line_blocks():
    """z = j0.1 gives y0 = -j10, ybar = [j10], Y = [-j10]."""
    y0, ybar, y = build_admittance([Line(0, 1, 0.1j)], 1)
    assert y0 == pytest.approx(-10j)
    assert ybar[0] == pytest.approx(10j)
    assert y[0, 0] == pytest.approx(-10j)


def test_shunt_adds_to_both_diagonals():
    y0, ybar, y = build_admittance([Line(0, 1, 0.1j, 0.01j)], 1)
    assert y[0, 0] == pytest.approx(-10j + 0.01j)
    assert y0 == pytest.approx(-10j + 0.01j)
    assert ybar[0] == pytest.approx(10j)


def test_three_node_chain_degree_two():
    z = 0.02 + 0.04j
    y = 1.0 / z
    _, _, yblock = build_admittance([Line(0, 1, z), Line(1, 2, z)], 2)
    assert yblock[0, 0] == pytest.approx(2 * y)
    assert yblock[0, 1] == pytest.approx(-y)
    assert yblock[1, 1] == pytest.approx(y)


def test_zero_impedance_rejected():
    with pytest.raises(DegenerateLineError):
        build_admittance([Line(0, 1, 0j)], 1)


def test_disconnected_node_rejected():
    with pytest.raises(DisconnectedNodeError):
        build_admittance([Line(0, 1, 0.1j)], 2)


def test_bad_node_reference_rejected():
    with pytest.raises(GridModelError):
        build_admittance([Line(0, 5, 0.1j)], 2)


def test_shunt_free_row_sums_zero(feeder):
    full = feeder.full_admittance()
    assert np.abs(full.sum(axis=1)).max() < 1e-12


def test_row_sums_equal_total_shunt():
    net = build_network(2, [Line(0, 1, 0.1j, 0.02j), Line(1, 2, 0.1j, 0.03j)], 1.0,
                        [1, 2], [0, 1], [DerSpec(1, 0.5)])
    sums = net.full_admittance().sum(axis=1)
    assert sums[0] == pytest.approx(0.02j)
    assert sums[1] == pytest.approx(0.05j)
    assert sums[2] == pytest.approx(0.03j)


def test_admittance_symmetric(feeder):
    assert np.allclose(feeder.y_matrix, feeder.y_matrix.T)


def test_permutation_equivariance():
    rng = np.random.default_rng(0)
    n = 6
    lines = [Line(0, 1, 0.01 + 0.02j), Line(1, 2, 0.02 + 0.01j), Line(2, 3, 0.015 + 0.03j),
             Line(1, 4, 0.01 + 0.01j), Line(4, 5, 0.02 + 0.02j), Line(2, 6, 0.01 + 0.04j)]
    _, _, y = build_admittance(lines, n)
    perm = rng.permutation(n) + 1  # new label of old node k+1
    relabeled = [Line(0 if ln.from_node == 0 else int(perm[ln.from_node - 1]),
                      0 if ln.to_node == 0 else int(perm[ln.to_node - 1]),
                      ln.z_series) for ln in lines]
    _, _, y2 = build_admittance(relabeled, n)
    p = np.zeros((n, n))
    for old, new in enumerate(perm):
        p[new - 1, old] = 1.0
    assert np.allclose(y2, p @ y @ p.T, atol=1e-14)


def test_net_injection_zero_case():
    placement = np.array([1])
    s = net_injection(np.zeros(2), np.zeros(1, dtype=complex), placement, 1)
    assert np.all(s == 0)


def test_net_injection_single_source():
    placement = np.array([2])
    s = net_injection(np.array([0.1, 0.05]), np.zeros(3, dtype=complex), placement, 3)
    assert s[1] == pytest.approx(0.1 + 0.05j)
    assert s[0] == 0 and s[2] == 0


def test_net_injection_same_node_sums():
    placement = np.array([2, 2])
    u = np.array([0.1, 0.2, 0.05, -0.01])
    s = net_injection(u, np.zeros(2, dtype=complex), placement, 2)
    assert s[1] == pytest.approx(0.3 + 0.04j)


def test_net_injection_subtracts_loads():
    placement = np.array([1])
    loads = np.array([0.2 + 0.1j])
    s = net_injection(np.array([0.05, 0.0]), loads, placement, 1)
    assert s[0] == pytest.approx(-0.15 - 0.1j)


def test_network_json_roundtrip(tmp_path, feeder):
    path = tmp_path / "net.json"
    save_network(feeder, path)
    loaded = load_network(path)
    assert loaded.node_count == feeder.node_count
    assert np.allclose(loaded.y_matrix, feeder.y_matrix)
    assert [d.s_n for d in loaded.ders] == [d.s_n for d in feeder.ders]
    assert np.array_equal(loaded.monitored_nodes, feeder.monitored_nodes)


def test_profile_csv_roundtrip(tmp_path, feeder, day_profile):
    path = tmp_path / "profiles.csv"
    save_profile_csv(day_profile, path)
    loaded = load_profile_csv(path, feeder.node_count, feeder.der_count)
    assert loaded.n_steps == day_profile.n_steps
    assert np.allclose(loaded.p_load, day_profile.p_load, atol=1e-9)
    assert np.allclose(loaded.p_max, day_profile.p_max, atol=1e-9)


def test_profile_header_mismatch_rejected(tmp_path, feeder, day_profile):
    path = tmp_path / "profiles.csv"
    save_profile_csv(day_profile, path)
    with pytest.raises(GridModelError):
        load_profile_csv(path, feeder.node_count - 1, feeder.der_count)


def test_profile_requires_uniform_grid():
    with pytest.raises(GridModelError):
        LoadProfile(t=np.array([0.0, 1.0, 3.0]), p_load=np.zeros((3, 1)),
                    q_load=np.zeros((3, 1)), p_max=np.zeros((3, 1)))


def test_profile_rejects_negative_availability():
    with pytest.raises(GridModelError):
        LoadProfile(t=np.array([0.0, 1.0]), p_load=np.zeros((2, 1)),
                    q_load=np.zeros((2, 1)), p_max=np.array([[0.1], [-0.1]]))


def test_der_placement_validated():
    with pytest.raises(GridModelError):
        build_network(1, [Line(0, 1, 0.1j)], 1.0, [1], [0], [DerSpec(3, 0.5)])
