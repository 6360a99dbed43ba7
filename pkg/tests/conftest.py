"""Shared fixtures: the bundled feeder, its day profiles, and one full
training-pipeline run (linear model -> dataset -> surrogate) reused by the
surrogate/simulation tests and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

from gridflow.derconstraints import DerParams, ThetaVector
from gridflow.fixtures import make_day_profile, make_feeder, make_two_node
from gridflow.powerflow import build_linear_model
from gridflow.sgf import CostSpec, SgfConfig
from gridflow.surrogate import AdamConfig, ArchConfig, generate_dataset, measure_nn_error, train

V_LOWER, V_UPPER, I_UPPER = 0.95, 1.05, 2.0

# The offline-training protocol knobs: flow gain 0.2 with unit step, ten
# iterations per scenario, Adam lr 0.001 / batch 256 / dropout 0.2, up to 500
# epochs with early stopping on a 10% held-out split.
GEN_CFG = SgfConfig(beta=1.0, eta=0.2, dt=1.0, cost=CostSpec())
ONLINE_CFG = SgfConfig(beta=1.0, eta=0.02, dt=10.0, cost=CostSpec())
N_SCENARIOS = 1000
N_ITER = 10
ADAM = AdamConfig(learning_rate=0.001, batch_size=256, max_epochs=500, dropout=0.2,
                  patience=500, val_fraction=0.1)
ARCH = ArchConfig(alpha=2, n_hidden_layers=3)


@pytest.fixture(scope="session")
def feeder():
    return make_feeder()


@pytest.fixture(scope="session")
def two_node():
    return make_two_node()


@pytest.fixture(scope="session")
def day_profile(feeder):
    return make_day_profile(feeder)


@pytest.fixture(scope="session")
def theta_base(feeder):
    ders = [DerParams(d.s_n, 0.0, d.q_frac) for d in feeder.ders]
    return ThetaVector(ders, V_LOWER, V_UPPER, I_UPPER)


@pytest.fixture(scope="session")
def linear_model(feeder, day_profile):
    s_n = np.array([d.s_n for d in feeder.ders])
    base_u = np.concatenate([0.5 * s_n, np.zeros(feeder.der_count)])
    k = int(np.argmin(np.abs(day_profile.t - 13 * 3600.0)))
    return build_linear_model(feeder, base_u, day_profile.loads_at(k),
                              box_radius=0.45, n_samples=48, n_jacobian_samples=6, seed=0)


@dataclass
class TrainedPipeline:
    dataset: object
    model: object
    error: object
    train_wall_seconds: float
    generate_wall_seconds: float


@pytest.fixture(scope="session")
def pipeline(feeder, day_profile, theta_base, linear_model):
    t0 = time.perf_counter()
    dataset = generate_dataset(feeder, linear_model, day_profile, theta_base, GEN_CFG,
                               n_scenarios=N_SCENARIOS, n_iter=N_ITER, seed=3)
    t_gen = time.perf_counter() - t0
    t0 = time.perf_counter()
    model = train(dataset, ARCH, ADAM, seed=11)
    t_train = time.perf_counter() - t0
    error = measure_nn_error(model, dataset, split="test")
    return TrainedPipeline(dataset=dataset, model=model, error=error,
                           train_wall_seconds=t_train, generate_wall_seconds=t_gen)
