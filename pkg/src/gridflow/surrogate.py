"""Feedforward surrogate of the safety-filter QP solution map.

Architecture is [d_in, h, h, h, 2G] with leaky-rectifier hidden units
(slope 0.01) and h = alpha * d_in (alpha = 2 by default). Inputs follow the
fixed feature layout

    [(p_i - p_max_i)/s_n_i]_G  [q_i/s_n_i]_G  [(nu_j - V_lo)/(V_hi - V_lo)]_M  [p_max_i]_G

(optionally an appended current block, off by default), so d_in = 3G + M.
Targets are the QP velocities scaled per-coordinate by their natural gradient
magnitudes (2 c_p / s_n for p, 2 c_q q_frac / s_n for q); `forward` undoes the
scaling, so callers always see raw velocities.

Training is plain mini-batch Adam on the mean squared error with inverted
dropout between hidden layers and early stopping on a held-out validation
split. Initialization, shuffling, and dropout masks all draw from one seeded
generator, so a fixed seed reproduces the trained weights bit-for-bit.
The backward pass is written out layer by layer; tests hold it against central
finite differences.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .derconstraints import ThetaVector
from .grid import LoadProfile, NetworkModel
from .powerflow import GridState, LinearModel, measure, solve_pf_fixed_point
from .qpsolver import DualActiveSetSolver
from .sgf import SgfConfig

LEAKY_SLOPE = 0.01


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, epoch):
        super().__init__(msg)
        self.epoch = epoch


@dataclass
class NormMeta:
    """Feature/target scaling parameters; must match the DER layout exactly."""

    s_n: np.ndarray
    q_frac: np.ndarray
    v_lower: float
    v_upper: float
    out_scale: np.ndarray
    include_currents: bool = False

    @property
    def der_count(self) -> int:
        return self.s_n.size

    def to_dict(self) -> dict:
        return {
            "s_n": self.s_n.tolist(),
            "q_frac": self.q_frac.tolist(),
            "v_lower": self.v_lower,
            "v_upper": self.v_upper,
            "out_scale": self.out_scale.tolist(),
            "include_currents": self.include_currents,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormMeta":
        return cls(
            s_n=np.array(d["s_n"], dtype=float),
            q_frac=np.array(d["q_frac"], dtype=float),
            v_lower=float(d["v_lower"]),
            v_upper=float(d["v_upper"]),
            out_scale=np.array(d["out_scale"], dtype=float),
            include_currents=bool(d["include_currents"]),
        )


def norm_meta_for(theta: ThetaVector, cost_c_p: float = 3.0, cost_c_q: float = 1.0,
                  include_currents: bool = False) -> NormMeta:
    s_n = np.array([d.s_n for d in theta.ders])
    q_frac = np.array([d.q_frac for d in theta.ders])
    out_scale = np.concatenate([2.0 * cost_c_p / s_n, 2.0 * cost_c_q * q_frac / s_n])
    return NormMeta(s_n=s_n, q_frac=q_frac, v_lower=theta.v_lower, v_upper=theta.v_upper,
                    out_scale=out_scale, include_currents=include_currents)


def normalize_input(meta: NormMeta, u: np.ndarray, nu: np.ndarray, p_max: np.ndarray,
                    iota: np.ndarray | None = None) -> np.ndarray:
    g = meta.der_count
    u = np.asarray(u, dtype=float)
    parts = [
        (u[:g] - p_max) / meta.s_n,
        u[g:] / meta.s_n,
        (np.asarray(nu, dtype=float) - meta.v_lower) / (meta.v_upper - meta.v_lower),
        np.asarray(p_max, dtype=float),
    ]
    if meta.include_currents:
        if iota is None:
            raise ValueError("current block requested but no currents supplied")
        parts.append(np.asarray(iota, dtype=float))
    return np.concatenate(parts)


def denormalize_input(meta: NormMeta, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of normalize_input, returning (u, nu, p_max); round-trip exact."""
    if meta.include_currents:
        raise ValueError("layout is ambiguous with an appended current block")
    g = meta.der_count
    x = np.asarray(x, dtype=float)
    m = x.size - 3 * g
    if m < 0:
        raise ValueError(f"feature vector of length {x.size} cannot hold 3G = {3 * g} heads")
    nu = x[2 * g : 2 * g + m] * (meta.v_upper - meta.v_lower) + meta.v_lower
    p_max = x[2 * g + m :]
    p = x[:g] * meta.s_n + p_max
    q = x[g : 2 * g] * meta.s_n
    return np.concatenate([p, q]), nu, p_max


@dataclass
class TrainingReport:
    epochs_run: int
    best_epoch: int
    train_loss: list[float]
    val_loss: list[float]
    final_train_loss: float
    best_val_loss: float
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "final_train_loss": self.final_train_loss,
            "best_val_loss": self.best_val_loss,
            "wall_seconds": self.wall_seconds,
        }


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm_meta: NormMeta
    activation_slope: float = LEAKY_SLOPE
    seed: int | None = None
    training_report: TrainingReport | None = None

    def __post_init__(self):
        dims = self.layer_dims
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} do not chain {dims}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def lipschitz_bound(self) -> float:
        """Product of layer spectral norms; hidden slopes are <= 1."""
        bound = 1.0
        for w in self.weights:
            bound *= float(np.linalg.norm(w, 2))
        return bound


def init_mlp(layer_dims, norm_meta: NormMeta, seed: int) -> MlpModel:
    """Fan-in scaled uniform init, all draws from one seeded generator."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(rng.uniform(-bound, bound, size=d_out))
    return MlpModel(layer_dims=list(layer_dims), weights=weights, biases=biases,
                    norm_meta=norm_meta, seed=seed)


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def _forward_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Batched inference on normalized inputs, normalized outputs."""
    h = x
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w.T + b
        if i != last:
            h = _leaky(h, model.activation_slope)
    return h


def _forward_single(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """One-sample inference; 1-D products keep the per-step latency down."""
    h = x
    slope = model.activation_slope
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = w @ h + b
        if i != last:
            h = np.where(h > 0, h, slope * h)
    return h


def forward(model: MlpModel, u: np.ndarray, xi: GridState, theta: ThetaVector) -> np.ndarray:
    """Predicted flow velocity at one operating point, in raw (unscaled) units."""
    meta = model.norm_meta
    p_max = np.array([d.p_max for d in theta.ders])
    x = normalize_input(meta, u, xi.nu, p_max, iota=xi.iota if meta.include_currents else None)
    if x.size != model.layer_dims[0]:
        raise ValueError(f"input has {x.size} features, model expects {model.layer_dims[0]}")
    return _forward_single(model, x) * meta.out_scale


def _forward_train(model, x, rng, dropout):
    """Forward pass caching pre-activations, layer inputs, and dropout masks."""
    h = x
    pre, layer_in, masks = [], [x], []
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ w.T + b
        pre.append(a)
        if i != last:
            h = _leaky(a, model.activation_slope)
            if dropout > 0.0:
                mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
                h = h * mask
            else:
                mask = None
            masks.append(mask)
            layer_in.append(h)
    return pre, layer_in, masks, pre[-1]


def _backward(model, pre, layer_in, masks, grad_out):
    """Gradients of the batch loss wrt every weight and bias."""
    g_w = [None] * model.n_layers
    g_b = [None] * model.n_layers
    delta = grad_out
    for i in range(model.n_layers - 1, -1, -1):
        g_w[i] = delta.T @ layer_in[i]
        g_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i]
            if masks[i - 1] is not None:
                delta = delta * masks[i - 1]
            delta = delta * np.where(pre[i - 1] > 0, 1.0, model.activation_slope)
    return g_w, g_b


@dataclass
class AdamConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    max_epochs: int = 500
    dropout: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 25
    val_fraction: float = 0.1


@dataclass
class ArchConfig:
    alpha: int = 2
    n_hidden_layers: int = 3
    include_currents: bool = False


def mlp_dims(n_features: int, n_outputs: int, arch: ArchConfig) -> list[int]:
    h = arch.alpha * n_features
    return [n_features] + [h] * arch.n_hidden_layers + [n_outputs]


def train(dataset: "Dataset", arch: ArchConfig, opt: AdamConfig, seed: int = 0) -> MlpModel:
    """Fit the surrogate on the dataset's train split, early-stopped on validation.

    The validation split comes from the dataset tags when present, otherwise
    a `val_fraction` sample of the training rows is held out. Loss is the
    mean over samples of the squared 2-norm error in scaled target units.
    """
    x_train, y_train = dataset.split_arrays("train")
    x_val, y_val = dataset.split_arrays("validation")
    if x_train.shape[0] == 0:
        raise ValueError("dataset has no training rows")
    rng = np.random.default_rng(seed)
    if x_val.shape[0] == 0:
        n = x_train.shape[0]
        perm = rng.permutation(n)
        n_val = max(1, int(round(opt.val_fraction * n)))
        val_idx, train_idx = perm[:n_val], perm[n_val:]
        x_val, y_val = x_train[val_idx], y_train[val_idx]
        x_train, y_train = x_train[train_idx], y_train[train_idx]

    dims = mlp_dims(x_train.shape[1], y_train.shape[1], arch)
    model = init_mlp(dims, dataset.norm_meta, seed=seed)
    m_state = [np.zeros_like(w) for w in model.weights] + [np.zeros_like(b) for b in model.biases]
    v_state = [np.zeros_like(g) for g in m_state]
    t_step = 0

    def val_loss_now():
        err = _forward_batch(model, x_val) - y_val
        return float((err**2).sum(axis=1).mean())

    best_val = val_loss_now()
    best_epoch = 0
    best_params = ([w.copy() for w in model.weights], [b.copy() for b in model.biases])
    train_curve, val_curve = [], []
    n = x_train.shape[0]
    started = time.perf_counter()
    epochs_run = 0

    for epoch in range(opt.max_epochs):
        epochs_run = epoch + 1
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            pre, layer_in, masks, out = _forward_train(model, xb, rng, opt.dropout)
            err = out - yb
            batch_loss = float((err**2).sum(axis=1).mean())
            epoch_loss += batch_loss * idx.size
            grad_out = 2.0 * err / idx.size
            g_w, g_b = _backward(model, pre, layer_in, masks, grad_out)
            t_step += 1
            params = model.weights + model.biases
            grads = g_w + g_b
            for j, (p, g) in enumerate(zip(params, grads)):
                m_state[j] = opt.beta1 * m_state[j] + (1 - opt.beta1) * g
                v_state[j] = opt.beta2 * v_state[j] + (1 - opt.beta2) * g * g
                m_hat = m_state[j] / (1 - opt.beta1**t_step)
                v_hat = v_state[j] / (1 - opt.beta2**t_step)
                p -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
        epoch_loss /= n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}", epoch)
        vl = val_loss_now()
        train_curve.append(epoch_loss)
        val_curve.append(vl)
        if vl < best_val:
            best_val = vl
            best_epoch = epoch + 1
            best_params = ([w.copy() for w in model.weights], [b.copy() for b in model.biases])
        elif epoch + 1 - best_epoch >= opt.patience:
            break

    model.weights, model.biases = best_params
    model.training_report = TrainingReport(
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        train_loss=train_curve,
        val_loss=val_curve,
        final_train_loss=train_curve[-1] if train_curve else float("nan"),
        best_val_loss=best_val,
        wall_seconds=time.perf_counter() - started,
    )
    return model


@dataclass
class Dataset:
    """Flat sample arrays plus provenance columns and split tags."""

    x: np.ndarray
    y: np.ndarray
    scenario: np.ndarray
    iteration: np.ndarray
    split: np.ndarray
    norm_meta: NormMeta
    seed: int
    skipped_scenarios: list[int] = field(default_factory=list)

    def __post_init__(self):
        train_scen = set(self.scenario[self.split == "train"].tolist())
        test_scen = set(self.scenario[self.split == "test"].tolist())
        if train_scen & test_scen:
            raise ValueError(f"train/test share scenarios: {sorted(train_scen & test_scen)[:5]}")

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    def split_arrays(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        sel = self.split == tag
        return self.x[sel], self.y[sel]


@dataclass
class TrainingSample:
    x: np.ndarray
    y: np.ndarray
    scenario: int
    iteration: int
    split: str


def sample_at(dataset: Dataset, i: int) -> TrainingSample:
    return TrainingSample(x=dataset.x[i], y=dataset.y[i], scenario=int(dataset.scenario[i]),
                          iteration=int(dataset.iteration[i]), split=str(dataset.split[i]))


def _sample_start_u(theta: ThetaVector, rng: np.random.Generator,
                    explore_fraction: float = 0.1) -> np.ndarray:
    """Scenario starting point.

    Mostly operating-state-like draws (a random fraction of the available
    active power at unity power factor, which is where a feeder actually sits
    before the controller acts); a small exploration fraction draws (p, q)
    uniformly over the admissible set so off-path states are not unseen.
    """
    from .derconstraints import project_setpoint

    g = theta.der_count
    u = np.zeros(2 * g)
    explore = rng.random() < explore_fraction
    for i, d in enumerate(theta.ders):
        p = rng.uniform(0.0, max(d.p_max, 1e-12))
        q = rng.uniform(-d.q_frac * d.s_n, d.q_frac * d.s_n) if explore else 0.0
        u[i], u[g + i] = project_setpoint(d, p, q)
    return u


def generate_dataset(
    net: NetworkModel,
    lm: LinearModel,
    profile: LoadProfile,
    theta_base: ThetaVector,
    cfg: SgfConfig,
    n_scenarios: int,
    n_iter: int = 10,
    seed: int = 0,
    test_fraction: float = 0.15,
    val_fraction: float = 0.1,
    window: tuple[float, float] | None = None,
) -> Dataset:
    """Scenario-sampled QP input/output pairs (the offline training protocol).

    Each scenario draws a time instant uniformly from the profile window and a
    random feasible starting point, then runs `n_iter` Euler steps of the
    QP-defined flow, recording the normalized features and the scaled velocity
    at every visited point. Scenarios whose power flow or QP fails are skipped
    and logged in `skipped_scenarios`, never imputed. Splits are assigned by
    scenario so train and test never share one.
    """
    rng = np.random.default_rng(seed)
    meta = norm_meta_for(theta_base, cfg.cost.c_p, cfg.cost.c_q)
    solver = DualActiveSetSolver()
    g = theta_base.der_count

    t_lo = profile.t[0] if window is None else window[0]
    t_hi = profile.t[-1] if window is None else window[1]
    k_lo = int(np.searchsorted(profile.t, t_lo, side="left"))
    k_hi = int(np.searchsorted(profile.t, t_hi, side="right")) - 1
    if k_hi < k_lo:
        raise ValueError("profile window is empty")

    n_val = int(round(val_fraction * n_scenarios))
    n_test = int(round(test_fraction * n_scenarios))
    n_train = n_scenarios - n_val - n_test
    if n_train <= 0:
        raise ValueError("no training scenarios left after the validation/test split")
    tags = ["train"] * n_train + ["validation"] * n_val + ["test"] * n_test

    xs, ys, scen_col, iter_col, split_col = [], [], [], [], []
    skipped = []
    from .sgf import sgf_step

    for scen in range(n_scenarios):
        k = int(rng.integers(k_lo, k_hi + 1))
        loads = profile.loads_at(k)
        p_max = profile.p_max[k]
        theta = theta_base.with_p_max(p_max)
        u = _sample_start_u(theta, rng)
        solver.reset()
        try:
            rows = []
            for it in range(n_iter):
                pf = solve_pf_fixed_point(net, u, loads)
                xi = measure(net, pf)
                x = normalize_input(meta, u, xi.nu, p_max,
                                    iota=xi.iota if meta.include_currents else None)
                step = sgf_step(lm, theta, u, xi, cfg, solver)
                rows.append((x, step.z / meta.out_scale, it))
                u = step.u_next
        except Exception:
            skipped.append(scen)
            continue
        for x, y, it in rows:
            xs.append(x)
            ys.append(y)
            scen_col.append(scen)
            iter_col.append(it)
            split_col.append(tags[scen])

    if not xs:
        raise RuntimeError("every scenario failed; nothing to learn from")
    return Dataset(
        x=np.array(xs), y=np.array(ys),
        scenario=np.array(scen_col, dtype=int),
        iteration=np.array(iter_col, dtype=int),
        split=np.array(split_col, dtype=object),
        norm_meta=meta, seed=seed, skipped_scenarios=skipped,
    )


@dataclass
class SurrogateError:
    """Test-set accuracy in both aggregation conventions, raw and scaled units."""

    mse: float            # mean ||error||^2 per sample, raw units
    rmse: float           # sqrt of the above
    max_error: float      # sup ||error||_2 over the split, raw units (E_NN)
    mse_per_coord: float  # mean squared error per coordinate, raw units
    mse_scaled: float     # per-coordinate MSE in scaled (normalized) target units
    n_samples: int


def measure_nn_error(model: MlpModel, dataset: Dataset, split: str = "test") -> SurrogateError:
    x, y = dataset.split_arrays(split)
    if x.shape[0] == 0:
        raise ValueError(f"dataset has no '{split}' rows")
    err_scaled = _forward_batch(model, x) - y
    err_raw = err_scaled * model.norm_meta.out_scale
    per_sample = (err_raw**2).sum(axis=1)
    mse = float(per_sample.mean())
    return SurrogateError(
        mse=mse,
        rmse=float(np.sqrt(mse)),
        max_error=float(np.sqrt(per_sample.max())),
        mse_per_coord=float((err_raw**2).mean()),
        mse_scaled=float((err_scaled**2).mean()),
        n_samples=x.shape[0],
    )


def save_model(model: MlpModel, path) -> None:
    report = model.training_report.to_dict() if model.training_report else None
    meta = {"created_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    if report is not None:
        # wall time is run-dependent; keep the artifact byte-reproducible
        meta["wall_seconds"] = report.pop("wall_seconds")
    doc = {
        "layer_dims": model.layer_dims,
        "activation": {"kind": "leaky_relu", "slope": model.activation_slope},
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "norm_meta": model.norm_meta.to_dict(),
        "seed": model.seed,
        "training_report": report,
        "meta": meta,
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path) -> MlpModel:
    doc = json.loads(Path(path).read_text())
    dims = doc["layer_dims"]
    weights = [np.array(w, dtype=float).reshape(dims[i + 1], dims[i]) for i, w in enumerate(doc["weights"])]
    biases = [np.array(b, dtype=float) for b in doc["biases"]]
    report = doc.get("training_report")
    if report is not None:
        report.setdefault("wall_seconds", doc.get("meta", {}).get("wall_seconds", 0.0))
    return MlpModel(
        layer_dims=list(dims),
        weights=weights,
        biases=biases,
        norm_meta=NormMeta.from_dict(doc["norm_meta"]),
        activation_slope=float(doc["activation"]["slope"]),
        seed=doc.get("seed"),
        training_report=TrainingReport(**report) if report else None,
    )


def save_dataset(dataset: Dataset, out_dir, stem: str = "dataset") -> list[Path]:
    """One CSV per split, header scenario,k,x_1..x_d,y_1..y_2G."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = dataset.x.shape[1]
    n_out = dataset.y.shape[1]
    header = ["scenario", "k"] + [f"x_{j}" for j in range(1, d + 1)] + [f"y_{j}" for j in range(1, n_out + 1)]
    written = []
    for tag in ("train", "validation", "test"):
        sel = dataset.split == tag
        if not sel.any():
            continue
        path = out_dir / f"{stem}_{tag}.csv"
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for i in np.flatnonzero(sel):
                row = [int(dataset.scenario[i]), int(dataset.iteration[i])]
                row += [f"{v:.17g}" for v in dataset.x[i]]
                row += [f"{v:.17g}" for v in dataset.y[i]]
                writer.writerow(row)
        written.append(path)
    return written
