"""Distribution feeder model.

Single-phase equivalent of a radial/meshed feeder with N+1 nodes. Node 0 is
the substation (fixed voltage phasor v0), nodes 1..N carry loads and
inverter-interfaced DERs. Lines follow the Pi-model: a series impedance plus
half of the total shunt admittance lumped at each end. The nodal admittance
relation is assembled in partitioned form

    [i0]   [y0    ybar^T] [v0]
    [i ] = [ybar  Y     ] [v ]

with Y the N x N block over non-substation nodes.

All electrical quantities are per-unit; base conversion belongs to whatever
produced the input files, never to this package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GridModelError(ValueError):
    """Malformed or physically inconsistent network description."""


class DegenerateLineError(GridModelError):
    """A line with zero series impedance."""


class DisconnectedNodeError(GridModelError):
    """A non-substation node with no incident line."""


class SingularNetworkError(GridModelError):
    """The Y block is not invertible; the fixed-point solver needs Y^-1."""


@dataclass(frozen=True)
class Line:
    """Pi-model line: series impedance and half the total shunt admittance."""

    from_node: int
    to_node: int
    z_series: complex
    y_shunt_half: complex = 0j


@dataclass(frozen=True)
class DerSpec:
    """Static inverter data: connection node, apparent-power rating, q box fraction."""

    node: int
    s_n: float
    q_frac: float = 0.44


@dataclass(frozen=True)
class NetworkModel:
    """Immutable feeder description plus precomputed admittance blocks.

    ``monitored_nodes`` are 1-based node ids; ``monitored_lines`` index into
    ``lines``. ``y_inv`` is cached because every fixed-point iteration needs it.
    Instances are safe for concurrent reads.
    """

    node_count: int
    lines: tuple[Line, ...]
    v0: complex
    y0: complex
    ybar: np.ndarray
    y_matrix: np.ndarray
    y_inv: np.ndarray
    monitored_nodes: np.ndarray
    monitored_lines: np.ndarray
    ders: tuple[DerSpec, ...]

    @property
    def der_count(self) -> int:
        return len(self.ders)

    @property
    def placement(self) -> np.ndarray:
        """Node id of each DER, shape (G,)."""
        return np.array([d.node for d in self.ders], dtype=int)

    def full_admittance(self) -> np.ndarray:
        """(N+1) x (N+1) admittance matrix with the substation in row/col 0."""
        n = self.node_count
        full = np.zeros((n + 1, n + 1), dtype=complex)
        full[0, 0] = self.y0
        full[0, 1:] = self.ybar
        full[1:, 0] = self.ybar
        full[1:, 1:] = self.y_matrix
        return full


def build_admittance(lines, node_count: int) -> tuple[complex, np.ndarray, np.ndarray]:
    """Assemble the partitioned admittance blocks (y0, ybar, Y) from Pi-model lines.

    Node k's self-admittance is the sum of incident series admittances plus the
    incident half-shunts; the (f, t) off-diagonal is minus the series admittance.
    Raises DegenerateLineError for z = 0 and DisconnectedNodeError for any
    non-substation node with no incident line.
    """
    full = np.zeros((node_count + 1, node_count + 1), dtype=complex)
    touched = np.zeros(node_count + 1, dtype=bool)
    touched[0] = True
    for idx, ln in enumerate(lines):
        f, t = ln.from_node, ln.to_node
        for node in (f, t):
            if not (0 <= node <= node_count):
                raise GridModelError(f"line {idx} references node {node}, valid range 0..{node_count}")
        if f == t:
            raise GridModelError(f"line {idx} is a self-loop at node {f}")
        if ln.z_series == 0:
            raise DegenerateLineError(f"line {idx} ({f}-{t}) has zero series impedance")
        y = 1.0 / ln.z_series
        full[f, f] += y + ln.y_shunt_half
        full[t, t] += y + ln.y_shunt_half
        full[f, t] -= y
        full[t, f] -= y
        touched[f] = touched[t] = True
    if not touched.all():
        missing = np.flatnonzero(~touched)
        raise DisconnectedNodeError(f"nodes with no incident line: {missing.tolist()}")
    return full[0, 0], full[1:, 0].copy(), full[1:, 1:].copy()


def build_network(
    node_count: int,
    lines,
    v0: complex,
    monitored_nodes,
    monitored_lines,
    ders,
) -> NetworkModel:
    """Validate a feeder description and return the immutable model."""
    lines = tuple(lines)
    ders = tuple(ders)
    y0, ybar, y_matrix = build_admittance(lines, node_count)

    monitored_nodes = np.asarray(monitored_nodes, dtype=int)
    monitored_lines = np.asarray(monitored_lines, dtype=int)
    if monitored_nodes.size and not ((monitored_nodes >= 1) & (monitored_nodes <= node_count)).all():
        raise GridModelError(f"monitored_nodes outside 1..{node_count}: {monitored_nodes.tolist()}")
    if monitored_lines.size and not ((monitored_lines >= 0) & (monitored_lines < len(lines))).all():
        raise GridModelError(f"monitored_lines outside 0..{len(lines) - 1}: {monitored_lines.tolist()}")
    for d in ders:
        if not (1 <= d.node <= node_count):
            raise GridModelError(f"DER placed at node {d.node}, valid range 1..{node_count}")
        if d.s_n <= 0:
            raise GridModelError(f"DER at node {d.node} has non-positive rating {d.s_n}")

    try:
        y_inv = np.linalg.inv(y_matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularNetworkError("Y block is singular") from exc

    return NetworkModel(
        node_count=node_count,
        lines=lines,
        v0=complex(v0),
        y0=y0,
        ybar=ybar,
        y_matrix=y_matrix,
        y_inv=y_inv,
        monitored_nodes=monitored_nodes,
        monitored_lines=monitored_lines,
        ders=ders,
    )


def net_injection(u: np.ndarray, loads: np.ndarray, placement: np.ndarray, node_count: int) -> np.ndarray:
    """Per-node complex net power: DER injections minus loads.

    ``u`` is the control vector [p_1..p_G, q_1..q_G]; ``loads`` the per-node
    complex demand (positive = consumption). DERs sharing a node sum.
    """
    u = np.asarray(u, dtype=float)
    loads = np.asarray(loads, dtype=complex)
    g = placement.size
    if u.size != 2 * g:
        raise GridModelError(f"control vector has length {u.size}, expected {2 * g}")
    if loads.size != node_count:
        raise GridModelError(f"load vector has length {loads.size}, expected {node_count}")
    s = -loads.astype(complex)
    np.add.at(s, placement - 1, u[:g] + 1j * u[g:])
    return s


@dataclass
class LoadProfile:
    """Uniformly sampled demand and DER availability series.

    ``t`` is in seconds; ``p_load``/``q_load`` are (K, N) per-node demands,
    ``p_max`` is (K, G) available DER active power. Positive load = consumption.
    """

    t: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    p_max: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p_load = np.atleast_2d(np.asarray(self.p_load, dtype=float))
        self.q_load = np.atleast_2d(np.asarray(self.q_load, dtype=float))
        self.p_max = np.atleast_2d(np.asarray(self.p_max, dtype=float))
        k = self.t.size
        if not (self.p_load.shape[0] == self.q_load.shape[0] == self.p_max.shape[0] == k):
            raise GridModelError("profile series lengths disagree with the timestamp grid")
        if k >= 2:
            steps = np.diff(self.t)
            if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
                raise GridModelError("timestamps must be a uniform increasing grid")
        if (self.p_max < 0).any():
            raise GridModelError("p_max series has negative entries")

    @property
    def dt(self) -> float:
        if self.t.size < 2:
            raise GridModelError("profile with a single sample has no step")
        return float(self.t[1] - self.t[0])

    @property
    def n_steps(self) -> int:
        return self.t.size

    def loads_at(self, k: int) -> np.ndarray:
        """Complex per-node demand at row k."""
        return self.p_load[k] + 1j * self.q_load[k]


def load_network(path) -> NetworkModel:
    """Read a feeder from the JSON schema used by all bundled fixtures."""
    with open(path) as f:
        doc = json.load(f)
    try:
        lines = tuple(
            Line(
                from_node=int(ln["from"]),
                to_node=int(ln["to"]),
                z_series=complex(ln["r"], ln["x"]),
                y_shunt_half=complex(0.0, ln.get("b_half", 0.0)),
            )
            for ln in doc["lines"]
        )
        ders = tuple(
            DerSpec(node=int(d["node"]), s_n=float(d["s_n"]), q_frac=float(d.get("q_frac", 0.44)))
            for d in doc["ders"]
        )
        return build_network(
            node_count=int(doc["nodes"]),
            lines=lines,
            v0=complex(doc["v0"][0], doc["v0"][1]),
            monitored_nodes=doc["monitored_nodes"],
            monitored_lines=doc["monitored_lines"],
            ders=ders,
        )
    except KeyError as exc:
        raise GridModelError(f"network JSON missing key {exc}") from exc


def save_network(net: NetworkModel, path) -> None:
    doc = {
        "nodes": net.node_count,
        "v0": [net.v0.real, net.v0.imag],
        "lines": [
            {
                "from": ln.from_node,
                "to": ln.to_node,
                "r": ln.z_series.real,
                "x": ln.z_series.imag,
                "b_half": ln.y_shunt_half.imag,
            }
            for ln in net.lines
        ],
        "monitored_nodes": net.monitored_nodes.tolist(),
        "monitored_lines": net.monitored_lines.tolist(),
        "ders": [{"node": d.node, "s_n": d.s_n, "q_frac": d.q_frac} for d in net.ders],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def profile_header(n_nodes: int, n_ders: int) -> list[str]:
    return (
        ["t"]
        + [f"p_l_{i}" for i in range(1, n_nodes + 1)]
        + [f"q_l_{i}" for i in range(1, n_nodes + 1)]
        + [f"p_max_{i}" for i in range(1, n_ders + 1)]
    )


def load_profile_csv(path, n_nodes: int, n_ders: int) -> LoadProfile:
    """Read the load/availability CSV (header t,p_l_*,q_l_*,p_max_*)."""
    expected = profile_header(n_nodes, n_ders)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != expected:
            raise GridModelError(f"profile CSV header mismatch: got {header[:4]}..., expected {expected[:4]}...")
        rows = np.array([[float(x) for x in row] for row in reader])
    if rows.size == 0:
        raise GridModelError("profile CSV has no data rows")
    n = n_nodes
    return LoadProfile(
        t=rows[:, 0],
        p_load=rows[:, 1 : 1 + n],
        q_load=rows[:, 1 + n : 1 + 2 * n],
        p_max=rows[:, 1 + 2 * n :],
    )


def save_profile_csv(profile: LoadProfile, path) -> None:
    n_nodes = profile.p_load.shape[1]
    n_ders = profile.p_max.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(profile_header(n_nodes, n_ders))
        for k in range(profile.n_steps):
            row = [profile.t[k], *profile.p_load[k], *profile.q_load[k], *profile.p_max[k]]
            writer.writerow([f"{float(x):.10g}" for x in row])
