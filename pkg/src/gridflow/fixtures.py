"""Bundled desk-scale feeder and synthetic profiles.

A 10-node, 4-DER medium-voltage feeder small enough that every acceptance
check runs in seconds, yet electrically stressed enough that full PV output at
midday pushes leaf-node voltages well above 1.05 p.u. when nothing controls
them. All values are per-unit on a common base; the day profiles span
06:00-20:00 at 10 s resolution with a residential double-hump load and a
bell-shaped PV availability curve with slow weather variation.

`make_feeder()` / `make_day_profile()` are deterministic; the files shipped
under gridflow/data are their serialized outputs (regenerate with
`python -m gridflow.fixtures --out <dir>`).
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from .grid import DerSpec, Line, LoadProfile, NetworkModel, build_network, save_network, save_profile_csv

DATA_DIR = Path(__file__).parent / "data"
FEEDER_FILE = DATA_DIR / "feeder10.json"
PROFILE_FILE = DATA_DIR / "day_profiles.csv"

# Trunk 0-1-...-7 with laterals 3-8 and 5-9-10. Long rural segments: weak
# enough that unchecked midday PV lifts the leaves to ~1.08 p.u.
_LINE_TABLE = [
    (0, 1, 0.0081, 0.0122),
    (1, 2, 0.0088, 0.0128),
    (2, 3, 0.0095, 0.0135),
    (3, 4, 0.0101, 0.0142),
    (4, 5, 0.0108, 0.0149),
    (5, 6, 0.0115, 0.0155),
    (6, 7, 0.0122, 0.0162),
    (3, 8, 0.0135, 0.0176),
    (5, 9, 0.0128, 0.0169),
    (9, 10, 0.0142, 0.0182),
]

# Inverter ratings drawn from the 490/620/740 kVA classes on a 1 MVA base.
_DER_TABLE = [
    (4, 0.49),
    (7, 0.74),
    (8, 0.62),
    (10, 0.49),
]

# Per-node base demand, p.u.
_LOAD_BASE = np.array([0.030, 0.035, 0.040, 0.030, 0.045, 0.035, 0.050, 0.040, 0.035, 0.045])

LOAD_POWER_FACTOR = 0.9  # lagging; q = p * tan(acos(0.9))


def make_feeder() -> NetworkModel:
    """The bundled 10-node feeder."""
    lines = [Line(f, t, complex(r, x)) for f, t, r, x in _LINE_TABLE]
    ders = [DerSpec(node, s_n) for node, s_n in _DER_TABLE]
    return build_network(
        node_count=10,
        lines=lines,
        v0=1.0 + 0j,
        monitored_nodes=list(range(1, 11)),
        monitored_lines=list(range(len(lines))),
        ders=ders,
    )


def make_two_node(z: complex = 0.01 + 0.01j, s_n: float = 0.49) -> NetworkModel:
    """Minimal fixture used by hand-computable tests."""
    return build_network(
        node_count=1,
        lines=[Line(0, 1, z)],
        v0=1.0 + 0j,
        monitored_nodes=[1],
        monitored_lines=[0],
        ders=[DerSpec(1, s_n)],
    )


def _smooth_wiggle(rng: np.random.Generator, t: np.ndarray, knot_spacing: float, amplitude: float) -> np.ndarray:
    """Slow band-limited perturbation: random knots, cosine-smoothed interpolation."""
    t0, t1 = t[0], t[-1]
    n_knots = int(np.ceil((t1 - t0) / knot_spacing)) + 2
    knots_t = t0 + knot_spacing * np.arange(n_knots)
    knots_v = rng.uniform(-amplitude, amplitude, size=n_knots)
    idx = np.clip(np.searchsorted(knots_t, t, side="right") - 1, 0, n_knots - 2)
    frac = (t - knots_t[idx]) / knot_spacing
    w = 0.5 - 0.5 * np.cos(np.pi * frac)
    return knots_v[idx] * (1 - w) + knots_v[idx + 1] * w


def make_day_profile(
    net: NetworkModel,
    dt: float = 10.0,
    t_start: float = 6 * 3600.0,
    t_end: float = 20 * 3600.0,
    seed: int = 2024,
    pv_scale: float = 0.97,
) -> LoadProfile:
    """Synthetic 06:00-20:00 profiles at `dt` resolution.

    Loads follow a residential double hump (morning and evening) around the
    per-node base; PV availability is a daylight bell with a +-7% slow weather
    wiggle per plant, capped at `pv_scale` of the rating.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(t_start, t_end + dt / 2, dt)
    hours = t / 3600.0

    morning = np.exp(-0.5 * ((hours - 7.5) / 1.2) ** 2)
    evening = np.exp(-0.5 * ((hours - 19.0) / 1.8) ** 2)
    shape = 0.55 + 0.30 * morning + 0.45 * evening
    q_ratio = np.tan(np.arccos(LOAD_POWER_FACTOR))

    n = net.node_count
    p_load = np.empty((t.size, n))
    for node in range(n):
        wiggle = _smooth_wiggle(rng, t, knot_spacing=900.0, amplitude=0.06)
        p_load[:, node] = _LOAD_BASE[node] * shape * (1.0 + wiggle)
    q_load = p_load * q_ratio

    daylight = np.clip(np.sin(np.pi * (hours - 6.5) / 13.0), 0.0, None) ** 1.3
    g = net.der_count
    p_max = np.empty((t.size, g))
    for i, der in enumerate(net.ders):
        weather = 1.0 + _smooth_wiggle(rng, t, knot_spacing=1800.0, amplitude=0.07)
        p_max[:, i] = np.clip(der.s_n * pv_scale * daylight * weather, 0.0, der.s_n)
    return LoadProfile(t=t, p_load=p_load, q_load=q_load, p_max=p_max)


def write_bundled_data(out_dir: Path | str = DATA_DIR) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = make_feeder()
    feeder_path = out_dir / FEEDER_FILE.name
    profile_path = out_dir / PROFILE_FILE.name
    save_network(net, feeder_path)
    save_profile_csv(make_day_profile(net), profile_path)
    return feeder_path, profile_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="regenerate the bundled feeder and profile files")
    parser.add_argument("--out", default=str(DATA_DIR), help="output directory")
    args = parser.parse_args(argv)
    feeder, profile = write_bundled_data(args.out)
    print(f"wrote {feeder}\nwrote {profile}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
