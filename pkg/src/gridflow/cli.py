"""Command-line front end.

Subcommands mirror the pipeline stages: validate-network, run-pf,
build-linear, gen-dataset, train, simulate, evaluate. All take a JSON config
(`--config`), with `--seed`/`--out` flag overrides and `GRIDFLOW_SEED` /
`GRIDFLOW_OUT` environment overrides (flags beat environment beats file).

All randomness funnels through the single config seed. Artifacts are
deterministic given config+seed; anything inherently run-dependent (wall-clock
timing, creation timestamps) lives under a top-level "meta" key in the JSON
outputs so byte comparisons can mask exactly one field.

Errors exit nonzero after printing one machine-readable JSON line
{"error": {"message": ..., "path": ..., "field": ...}} to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import grid, powerflow, sim, surrogate
from .derconstraints import DerParams, ThetaVector
from .powerflow import LinearModel, LinearModelErrorBounds, NoiseSpec
from .sgf import CostSpec, SgfConfig


class ConfigError(ValueError):
    def __init__(self, message, path=None, field=None):
        super().__init__(message)
        self.path = path
        self.field = field


def _meta() -> dict:
    return {"created_at": time.strftime("%Y-%m-%dT%H:%M:%S")}


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


class _Section:
    """Dict wrapper that reports the JSON path of whatever key is wrong."""

    def __init__(self, data: dict, path: str, source: str):
        self._data = data
        self._path = path
        self._source = source

    def child(self, key: str, default=None) -> "_Section":
        value = self._data.get(key, default if default is not None else {})
        if not isinstance(value, dict):
            raise ConfigError(f"expected an object at {self._path}.{key}", self._source, f"{self._path}.{key}")
        return _Section(value, f"{self._path}.{key}", self._source)

    def get(self, key: str, default=None, required=False, kind=None):
        if key not in self._data:
            if required:
                raise ConfigError(f"missing required key {self._path}.{key}", self._source, f"{self._path}.{key}")
            return default
        value = self._data[key]
        if kind is not None:
            try:
                value = kind(value)
            except (TypeError, ValueError):
                raise ConfigError(
                    f"key {self._path}.{key} has invalid value {value!r}", self._source, f"{self._path}.{key}"
                )
        return value


@dataclass
class RunConfig:
    source: str
    network_path: Path
    profiles_path: Path
    out_dir: Path
    seed: int
    v_lower: float
    v_upper: float
    i_upper: float
    controller: str
    mode: str
    sgf_online: SgfConfig
    sgf_offline: SgfConfig
    linear: dict
    dataset: dict
    training: dict
    simulate: dict
    raw: dict

    def theta_base(self, net: grid.NetworkModel) -> ThetaVector:
        ders = [DerParams(d.s_n, 0.0, d.q_frac) for d in net.ders]
        return ThetaVector(ders, self.v_lower, self.v_upper, self.i_upper)


def load_config(path: str, seed_override=None, out_override=None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}", str(p), None)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}", str(p), None)
    root = _Section(doc, "$", str(p))

    env_seed = os.environ.get("GRIDFLOW_SEED")
    env_out = os.environ.get("GRIDFLOW_OUT")
    seed = seed_override if seed_override is not None else (
        int(env_seed) if env_seed is not None else root.get("seed", 0, kind=int))
    out_dir = Path(out_override if out_override is not None else (
        env_out if env_out is not None else root.get("out_dir", "out", kind=str)))

    network_path = Path(root.get("network", required=True, kind=str))
    profiles_path = Path(root.get("profiles", required=True, kind=str))
    base = p.parent
    if not network_path.is_absolute():
        network_path = base / network_path
    if not profiles_path.is_absolute():
        profiles_path = base / profiles_path
    for fp, key in ((network_path, "network"), (profiles_path, "profiles")):
        if not fp.exists():
            raise ConfigError(f"referenced file does not exist: {fp}", str(p), f"$.{key}")

    bounds = root.child("bounds")
    v_lower = bounds.get("v_lower", 0.95, kind=float)
    v_upper = bounds.get("v_upper", 1.05, kind=float)
    i_upper = bounds.get("i_upper", 2.0, kind=float)
    if not (0.0 < v_lower < v_upper):
        raise ConfigError(f"need 0 < v_lower < v_upper, got {v_lower}, {v_upper}", str(p), "$.bounds")
    if i_upper <= 0:
        raise ConfigError(f"i_upper must be positive, got {i_upper}", str(p), "$.bounds.i_upper")

    s = root.child("sgf")
    cost = CostSpec(c_p=s.get("c_p", 3.0, kind=float), c_q=s.get("c_q", 1.0, kind=float),
                    voltage_cost_weight=s.get("voltage_cost_weight", 0.0, kind=float))
    beta = s.get("beta", 1.0, kind=float)
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}", str(p), "$.sgf.beta")
    sgf_online = SgfConfig(beta=beta, eta=s.get("eta_online", 0.02, kind=float),
                           dt=s.get("dt_online", 10.0, kind=float), cost=cost)
    sgf_offline = SgfConfig(beta=beta, eta=s.get("eta_offline", 0.2, kind=float),
                            dt=s.get("dt_offline", 1.0, kind=float), cost=cost)

    lin = root.child("linear_model")
    linear = {
        "base_time": lin.get("base_time", 46800.0, kind=float),
        "base_u_fraction": lin.get("base_u_fraction", 0.5, kind=float),
        "fd_step": lin.get("fd_step", 1e-4, kind=float),
        "box_radius": lin.get("box_radius", 0.45, kind=float),
        "n_samples": lin.get("n_samples", 48, kind=int),
        "n_jacobian_samples": lin.get("n_jacobian_samples", 6, kind=int),
        "file": lin.get("file", "linear_model.json", kind=str),
    }
    ds = root.child("dataset")
    dataset = {
        "n_scenarios": ds.get("n_scenarios", 1000, kind=int),
        "n_iter": ds.get("n_iter", 10, kind=int),
        "test_fraction": ds.get("test_fraction", 0.15, kind=float),
        "val_fraction": ds.get("val_fraction", 0.1, kind=float),
        "stem": ds.get("stem", "dataset", kind=str),
    }
    tr = root.child("training")
    training = {
        "alpha": tr.get("alpha", 2, kind=int),
        "hidden_layers": tr.get("hidden_layers", 3, kind=int),
        "learning_rate": tr.get("learning_rate", 0.001, kind=float),
        "batch_size": tr.get("batch_size", 256, kind=int),
        "max_epochs": tr.get("max_epochs", 500, kind=int),
        "dropout": tr.get("dropout", 0.2, kind=float),
        "patience": tr.get("patience", 500, kind=int),
        "model_file": tr.get("model_file", "model.json", kind=str),
    }
    si = root.child("simulate")
    noise = si.child("noise")
    simulate = {
        "start_time": si.get("start_time", 39600.0, kind=float),
        "horizon_steps": si.get("horizon_steps", 720, kind=int),
        "eps_v": noise.get("eps_v", 0.0, kind=float),
        "eps_i": noise.get("eps_i", 0.0, kind=float),
        "offline_time": si.get("offline_time", 46800.0, kind=float),
        "offline_tol": si.get("offline_tol", 0.05, kind=float),
        "offline_max_steps": si.get("offline_max_steps", 200, kind=int),
    }
    controller = root.get("controller", "nn-sgf", kind=str).lower()
    if controller not in ("sgf", "nn-sgf", "exact-sgf", "no-control"):
        raise ConfigError(f"unknown controller {controller!r}", str(p), "$.controller")
    mode = root.get("mode", "online", kind=str).lower()
    if mode not in ("online", "offline"):
        raise ConfigError(f"unknown mode {mode!r}", str(p), "$.mode")

    return RunConfig(
        source=str(p), network_path=network_path, profiles_path=profiles_path,
        out_dir=out_dir, seed=seed, v_lower=v_lower, v_upper=v_upper, i_upper=i_upper,
        controller=controller, mode=mode, sgf_online=sgf_online, sgf_offline=sgf_offline,
        linear=linear, dataset=dataset, training=training, simulate=simulate, raw=doc,
    )


def _load_net_and_profile(cfg: RunConfig):
    net = grid.load_network(cfg.network_path)
    profile = grid.load_profile_csv(cfg.profiles_path, net.node_count, net.der_count)
    return net, profile


def _row_at(profile: grid.LoadProfile, t_seconds: float) -> int:
    k = int(np.argmin(np.abs(profile.t - t_seconds)))
    return k


def save_linear_model(lm: LinearModel, path: Path) -> None:
    b = lm.error_bounds
    doc = {
        "gamma_v": lm.gamma_v.tolist(),
        "gamma_i": lm.gamma_i.tolist(),
        "v_bar": lm.v_bar.tolist(),
        "i_bar": lm.i_bar.tolist(),
        "base_u": lm.base_u.tolist(),
        "base_loads_re": lm.base_loads.real.tolist(),
        "base_loads_im": lm.base_loads.imag.tolist(),
        "gamma_v_norm": lm.gamma_v_norm,
        "gamma_i_norm": lm.gamma_i_norm,
        "error_bounds": None if b is None else {
            "e_v": b.e_v, "e_i": b.e_i, "e_jv": b.e_jv, "e_ji": b.e_ji,
            "box_radius": b.box_radius, "n_samples": b.n_samples,
        },
        "meta": _meta(),
    }
    _write_json(path, doc)


def load_linear_model(path) -> LinearModel:
    doc = json.loads(Path(path).read_text())
    b = doc.get("error_bounds")
    bounds = None if b is None else LinearModelErrorBounds(
        e_v=b["e_v"], e_i=b["e_i"], e_jv=b["e_jv"], e_ji=b["e_ji"],
        box_radius=b["box_radius"], n_samples=b["n_samples"])
    return LinearModel(
        gamma_v=np.array(doc["gamma_v"], dtype=float),
        gamma_i=np.array(doc["gamma_i"], dtype=float),
        v_bar=np.array(doc["v_bar"], dtype=float),
        i_bar=np.array(doc["i_bar"], dtype=float),
        base_u=np.array(doc["base_u"], dtype=float),
        base_loads=np.array(doc["base_loads_re"], dtype=float) + 1j * np.array(doc["base_loads_im"], dtype=float),
        error_bounds=bounds,
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_validate_network(cfg: RunConfig) -> int:
    net, profile = _load_net_and_profile(cfg)
    full = net.full_admittance()
    shunt_free = all(ln.y_shunt_half == 0 for ln in net.lines)
    row_sums = np.abs(full.sum(axis=1)).max()
    report = {
        "nodes": net.node_count,
        "lines": len(net.lines),
        "ders": net.der_count,
        "monitored_nodes": net.monitored_nodes.tolist(),
        "monitored_lines": net.monitored_lines.tolist(),
        "y_symmetric": bool(np.allclose(net.y_matrix, net.y_matrix.T)),
        "y_invertible": True,
        "shunt_free": shunt_free,
        "max_row_sum": float(row_sums),
        "profile_steps": profile.n_steps,
        "profile_dt": profile.dt,
        "checks_passed": True,
        "meta": _meta(),
    }
    if shunt_free and row_sums > 1e-12:
        report["checks_passed"] = False
    _write_json(cfg.out_dir / "network_report.json", report)
    print(json.dumps({k: report[k] for k in ("nodes", "lines", "ders", "checks_passed")}))
    return 0 if report["checks_passed"] else 1


def cmd_run_pf(cfg: RunConfig) -> int:
    net, profile = _load_net_and_profile(cfg)
    k = _row_at(profile, cfg.simulate["start_time"])
    u = np.zeros(2 * net.der_count)
    pf = powerflow.solve_pf_fixed_point(net, u, profile.loads_at(k))
    xi = powerflow.measure(net, pf)
    doc = {
        "t": float(profile.t[k]),
        "v_re": pf.v.real.tolist(),
        "v_im": pf.v.imag.tolist(),
        "v_mag": np.abs(pf.v).tolist(),
        "nu_monitored": xi.nu.tolist(),
        "iota_monitored": xi.iota.tolist(),
        "iterations": pf.iterations,
        "residual": pf.residual,
        "meta": _meta(),
    }
    _write_json(cfg.out_dir / "pf_solution.json", doc)
    print(json.dumps({"converged": pf.converged, "iterations": pf.iterations, "residual": pf.residual}))
    return 0


def _build_linear(cfg: RunConfig, net, profile) -> LinearModel:
    k = _row_at(profile, cfg.linear["base_time"])
    s_n = np.array([d.s_n for d in net.ders])
    base_u = np.concatenate([cfg.linear["base_u_fraction"] * s_n, np.zeros(net.der_count)])
    return powerflow.build_linear_model(
        net, base_u, profile.loads_at(k),
        fd_step=cfg.linear["fd_step"], box_radius=cfg.linear["box_radius"],
        n_samples=cfg.linear["n_samples"], n_jacobian_samples=cfg.linear["n_jacobian_samples"],
        seed=cfg.seed,
    )


def cmd_build_linear(cfg: RunConfig) -> int:
    net, profile = _load_net_and_profile(cfg)
    lm = _build_linear(cfg, net, profile)
    save_linear_model(lm, cfg.out_dir / cfg.linear["file"])
    b = lm.error_bounds
    print(json.dumps({"gamma_v_norm": lm.gamma_v_norm, "gamma_i_norm": lm.gamma_i_norm,
                      "e_v": b.e_v, "e_i": b.e_i, "e_jv": b.e_jv, "e_ji": b.e_ji}))
    return 0


def _linear_model_for(cfg: RunConfig, net, profile) -> LinearModel:
    lm_path = cfg.out_dir / cfg.linear["file"]
    if lm_path.exists():
        return load_linear_model(lm_path)
    return _build_linear(cfg, net, profile)


def cmd_gen_dataset(cfg: RunConfig) -> int:
    net, profile = _load_net_and_profile(cfg)
    lm = _linear_model_for(cfg, net, profile)
    theta = cfg.theta_base(net)
    ds = surrogate.generate_dataset(
        net, lm, profile, theta, cfg.sgf_offline,
        n_scenarios=cfg.dataset["n_scenarios"], n_iter=cfg.dataset["n_iter"],
        seed=cfg.seed, test_fraction=cfg.dataset["test_fraction"],
        val_fraction=cfg.dataset["val_fraction"],
    )
    written = surrogate.save_dataset(ds, cfg.out_dir, stem=cfg.dataset["stem"])
    summary = {
        "n_samples": ds.n_samples,
        "n_train": int((ds.split == "train").sum()),
        "n_validation": int((ds.split == "validation").sum()),
        "n_test": int((ds.split == "test").sum()),
        "skipped_scenarios": ds.skipped_scenarios,
        "files": sorted(w.name for w in written),
        "meta": _meta(),
    }
    _write_json(cfg.out_dir / f"{cfg.dataset['stem']}_summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("n_samples", "n_train", "n_validation", "n_test")}))
    return 0


def _load_dataset(cfg: RunConfig, net) -> surrogate.Dataset:
    theta = cfg.theta_base(net)
    meta = surrogate.norm_meta_for(theta, cfg.sgf_offline.cost.c_p, cfg.sgf_offline.cost.c_q)
    xs, ys, scen, it, split = [], [], [], [], []
    found = False
    for tag in ("train", "validation", "test"):
        path = cfg.out_dir / f"{cfg.dataset['stem']}_{tag}.csv"
        if not path.exists():
            continue
        found = True
        import csv as _csv

        with open(path, newline="") as f:
            reader = _csv.reader(f)
            header = next(reader)
            d = sum(1 for h in header if h.startswith("x_"))
            for row in reader:
                scen.append(int(row[0]))
                it.append(int(row[1]))
                xs.append([float(v) for v in row[2 : 2 + d]])
                ys.append([float(v) for v in row[2 + d :]])
                split.append(tag)
    if not found:
        raise ConfigError(f"no dataset CSVs under {cfg.out_dir} with stem {cfg.dataset['stem']!r}; "
                          "run gen-dataset first", str(cfg.source), "$.dataset")
    return surrogate.Dataset(
        x=np.array(xs), y=np.array(ys), scenario=np.array(scen, dtype=int),
        iteration=np.array(it, dtype=int), split=np.array(split, dtype=object),
        norm_meta=meta, seed=cfg.seed,
    )


def cmd_train(cfg: RunConfig) -> int:
    net, _ = _load_net_and_profile(cfg)
    ds = _load_dataset(cfg, net)
    arch = surrogate.ArchConfig(alpha=cfg.training["alpha"], n_hidden_layers=cfg.training["hidden_layers"])
    opt = surrogate.AdamConfig(
        learning_rate=cfg.training["learning_rate"], batch_size=cfg.training["batch_size"],
        max_epochs=cfg.training["max_epochs"], dropout=cfg.training["dropout"],
        patience=cfg.training["patience"],
    )
    model = surrogate.train(ds, arch, opt, seed=cfg.seed)
    surrogate.save_model(model, cfg.out_dir / cfg.training["model_file"])
    err = surrogate.measure_nn_error(model, ds, split="test")
    report = {
        "layer_dims": model.layer_dims,
        "best_val_loss": model.training_report.best_val_loss,
        "epochs_run": model.training_report.epochs_run,
        "test_mse": err.mse,
        "test_rmse": err.rmse,
        "test_mse_scaled": err.mse_scaled,
        "test_max_error": err.max_error,
        "lipschitz_bound": model.lipschitz_bound(),
        "meta": {**_meta(), "wall_seconds": model.training_report.wall_seconds},
    }
    _write_json(cfg.out_dir / "training_report.json", report)
    print(json.dumps({k: report[k] for k in ("test_mse", "test_mse_scaled", "test_max_error", "epochs_run")}))
    return 0


def _controller_for(cfg: RunConfig, name: str, net, lm, model, sgf_cfg: SgfConfig):
    if name == "sgf":
        return sim.LinearSgfController(lm, sgf_cfg)
    if name == "nn-sgf":
        if model is None:
            raise ConfigError("nn-sgf requires a trained model; run train first",
                              str(cfg.source), "$.training.model_file")
        return sim.NnSgfController(model, sgf_cfg)
    if name == "exact-sgf":
        return sim.ExactSgfController(net, sgf_cfg)
    raise ConfigError(f"controller {name!r} has no runner", str(cfg.source), "$.controller")


def _model_for(cfg: RunConfig):
    path = cfg.out_dir / cfg.training["model_file"]
    return surrogate.load_model(path) if path.exists() else None


def cmd_simulate(cfg: RunConfig) -> int:
    net, profile = _load_net_and_profile(cfg)
    theta = cfg.theta_base(net)
    start = _row_at(profile, cfg.simulate["start_time"])
    noise = NoiseSpec(eps_v=cfg.simulate["eps_v"], eps_i=cfg.simulate["eps_i"])
    stem = f"trace_{cfg.controller}_{cfg.mode}"

    if cfg.controller == "no-control":
        trace = sim.run_no_control(net, profile, theta, start, cfg.simulate["horizon_steps"], seed=cfg.seed)
        converged = None
    else:
        lm = _linear_model_for(cfg, net, profile)
        model = _model_for(cfg)
        if cfg.mode == "online":
            controller = _controller_for(cfg, cfg.controller, net, lm, model, cfg.sgf_online)
            trace = sim.run_online(net, controller, profile, theta, cfg.sgf_online,
                                   start, cfg.simulate["horizon_steps"], noise, seed=cfg.seed)
            converged = None
        else:
            controller = _controller_for(cfg, cfg.controller, net, lm, model, cfg.sgf_offline)
            k = _row_at(profile, cfg.simulate["offline_time"])
            theta_t = theta.with_p_max(profile.p_max[k])
            u0 = np.zeros(2 * net.der_count)
            trace, converged, stationarity = sim.run_offline(
                net, controller, theta_t, profile.loads_at(k), u0, cfg.sgf_offline,
                tol=cfg.simulate["offline_tol"], max_steps=cfg.simulate["offline_max_steps"], lm=lm)

    sim.save_trace_csv(trace, cfg.out_dir / f"{stem}.csv")
    sim.save_trace_schema(trace, cfg.out_dir / f"{stem}_schema.json")
    metrics = sim.overvoltage_metrics(trace, cfg.v_upper)
    doc = {
        "controller": trace.controller,
        "mode": cfg.mode,
        "steps": trace.n_steps,
        "overvoltage": metrics.to_dict(),
        "max_viol_v": float(trace.viol_v.max(initial=0.0)),
        "max_viol_i": float(trace.viol_i.max(initial=0.0)),
        "events": trace.events,
        "converged": converged,
        "meta": {**_meta(), "mean_controller_seconds": trace.mean_controller_seconds()},
    }
    _write_json(cfg.out_dir / f"{stem}_metrics.json", doc)
    print(json.dumps({"controller": trace.controller, "steps": trace.n_steps,
                      "node_steps_over": metrics.node_steps_over}))
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    net, profile = _load_net_and_profile(cfg)
    theta = cfg.theta_base(net)
    lm = _linear_model_for(cfg, net, profile)
    model = _model_for(cfg)
    if model is None:
        raise ConfigError("evaluate needs a trained model; run train first",
                          str(cfg.source), "$.training.model_file")
    start = _row_at(profile, cfg.simulate["start_time"])
    horizon = cfg.simulate["horizon_steps"]
    noise = NoiseSpec(eps_v=cfg.simulate["eps_v"], eps_i=cfg.simulate["eps_i"])
    ds = _load_dataset(cfg, net)
    nn_err = surrogate.measure_nn_error(model, ds, split="test")

    traces = {}
    for name in ("sgf", "nn-sgf", "exact-sgf"):
        controller = _controller_for(cfg, name, net, lm, model, cfg.sgf_online)
        traces[name] = sim.run_online(net, controller, profile, theta, cfg.sgf_online,
                                      start, horizon, noise, seed=cfg.seed)
    traces["no-control"] = sim.run_no_control(net, profile, theta, start, horizon, seed=cfg.seed)

    theory_nn = sim.make_theory_estimates(lm, theta, cfg.sgf_online.beta, e_nn=nn_err.max_error, noise=noise)
    theory_model = sim.make_theory_estimates(lm, theta, cfg.sgf_online.beta, e_nn=0.0, noise=noise)
    invariance = {
        "sgf": sim.check_invariance(traces["sgf"], theory_model, net.monitored_nodes).to_dict(),
        "exact-sgf": sim.check_invariance(traces["exact-sgf"], theory_model, net.monitored_nodes).to_dict(),
        "nn-sgf": sim.check_invariance(traces["nn-sgf"], theory_nn, net.monitored_nodes).to_dict(),
    }

    # Offline convergence: exact equilibrium, then the learned flow toward it.
    # The reference equilibrium uses a small gain: the Euler stability edge on
    # stiff cost directions sits near eta*dt = 2 s_n^2 / (2 c_p), and a limit
    # cycle is no reference point.
    k = _row_at(profile, cfg.simulate["offline_time"])
    theta_t = theta.with_p_max(profile.p_max[k])
    loads = profile.loads_at(k)
    u0 = np.zeros(2 * net.der_count)
    ref_cfg = SgfConfig(beta=cfg.sgf_offline.beta, eta=0.05, dt=1.0, cost=cfg.sgf_offline.cost)
    exact_off = sim.ExactSgfController(net, ref_cfg)
    tr_star, star_conv, _ = sim.run_offline(net, exact_off, theta_t, loads, u0, ref_cfg,
                                            tol=1e-4, max_steps=800)
    u_star = tr_star.u[-1]
    nn_off = sim.NnSgfController(model, cfg.sgf_offline)
    tr_nn, nn_conv, stationarity = sim.run_offline(net, nn_off, theta_t, loads, u0, cfg.sgf_offline,
                                                   tol=cfg.simulate["offline_tol"],
                                                   max_steps=cfg.simulate["offline_max_steps"], lm=lm)
    distances = np.linalg.norm(tr_nn.u - u_star, axis=1)
    fit = sim.fit_convergence(tr_nn.t, distances)
    e1, e2 = sim.estimate_flow_jacobian_eigs(net, theta_t, loads, u_star, cfg.sgf_offline)
    theory_nn.e1, theory_nn.e2 = e1, e2
    theory_nn.rate, theory_nn.asymptotic_error = fit.rate, fit.asymptotic_error

    table_accuracy = {
        "training_points": int((ds.split == "train").sum()),
        "test_mse": nn_err.mse,
        "test_mse_scaled": nn_err.mse_scaled,
        "test_max_error": nn_err.max_error,
    }
    overvoltage = {name: sim.overvoltage_metrics(tr, cfg.v_upper).to_dict() for name, tr in traces.items()}
    runtimes = {name: traces[name].mean_controller_seconds() for name in ("sgf", "nn-sgf", "exact-sgf")}
    report = {
        "theory": theory_nn.to_dict(),
        "invariance": invariance,
        "convergence_fit": fit.to_dict(),
        "offline": {"exact_converged": star_conv, "exact_steps": tr_star.n_steps,
                    "nn_converged": nn_conv, "nn_steps": tr_nn.n_steps,
                    "stationarity": stationarity},
        "accuracy_table": table_accuracy,
        "overvoltage": overvoltage,
        "meta": {**_meta(),
                 "runtime_table_seconds": runtimes,
                 "speedup_sgf_over_nn": runtimes["sgf"] / runtimes["nn-sgf"] if runtimes["nn-sgf"] else None},
    }
    _write_json(cfg.out_dir / "theory_report.json", report)
    print(json.dumps({"invariance_passed": all(v["passed"] for v in invariance.values()),
                      "fit_r_squared": fit.r_squared,
                      "nn_offline_steps": tr_nn.n_steps}))
    return 0


COMMANDS = {
    "validate-network": cmd_validate_network,
    "run-pf": cmd_run_pf,
    "build-linear": cmd_build_linear,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridflow",
                                     description="safe-gradient-flow OPF pursuit pipeline")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(json.dumps({"error": {"message": str(exc), "path": exc.path, "field": exc.field}}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(json.dumps({"error": {"message": f"{type(exc).__name__}: {exc}", "path": None, "field": None}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
