"""Shared fixtures for fnbo tests."""

import json

import numpy as np
import pytest

from fnbo import gp
from fnbo.config import ExperimentConfig, MCSettings, OptimizerSettings, Settings
from fnbo.discrete import DiscreteSetConfig
from fnbo.netposterior import NetworkPosterior
from fnbo.network import NetworkSpec


@pytest.fixture
def mock_settings(tmp_path):
    """Settings instance configured for testing (one worker, results under tmp_path)."""
    return Settings(threads=1, log_level="DEBUG", out_dir=str(tmp_path / "results"))


@pytest.fixture
def chain_spec():
    """Two-node cascade: y1 = f1(x1), y2 = f2(y1, x2)."""
    return NetworkSpec.from_dict({
        "K": 2,
        "parents": [[], [1]],
        "ext_inputs": [[1], [2]],
        "domain": [[0.0, 1.0], [0.0, 1.0]],
        "parent_ranges": [[], [[-3.0, 3.0]]],
        "costs": [1.0, 4.0],
    })


@pytest.fixture
def fig1_spec():
    """Two root nodes feeding a third: f3(f1(x1), f2(x2), x3)."""
    return NetworkSpec.from_dict({
        "K": 3,
        "parents": [[], [], [1, 2]],
        "ext_inputs": [[1], [2], [3]],
        "domain": [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]],
        "parent_ranges": [[], [], [[-5.0, 5.0], [-5.0, 5.0]]],
        "costs": [1.0, 2.0, 3.0],
    })


@pytest.fixture
def single_spec():
    return NetworkSpec.from_dict({
        "K": 1,
        "parents": [[]],
        "ext_inputs": [[1]],
        "domain": [[0.0, 1.0]],
        "parent_ranges": [[]],
        "costs": [1.0],
    })


@pytest.fixture
def single_posterior(single_spec):
    """One node with data at 0.2, 0.5 and 0.8 and fixed hyperparameters."""
    state = gp.from_hyperparameters(
        gp.KernelConfig(lengthscales=(0.2,), outputscale=1.0),
        [[0.2], [0.5], [0.8]],
        [0.3, 1.0, -0.2],
    )
    return NetworkPosterior.build(single_spec, [state], qmc_samples=64, seed=1)


@pytest.fixture
def chain_posterior(chain_spec):
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(6, 2))
    y1 = np.sin(3 * X[:, 0])
    y2 = y1 * X[:, 1] - 0.5 * y1**2
    node1 = gp.from_hyperparameters(
        gp.KernelConfig(lengthscales=(0.3,), outputscale=1.0), X[:, :1], y1, bounds=chain_spec.node_bounds(0)
    )
    node2 = gp.from_hyperparameters(
        gp.KernelConfig(lengthscales=(0.4, 0.4), outputscale=1.0),
        np.column_stack([y1, X[:, 1]]),
        y2,
        bounds=chain_spec.node_bounds(1),
    )
    return NetworkPosterior.build(chain_spec, [node1, node2], qmc_samples=64, seed=3, evaluated_inputs=X)


@pytest.fixture
def quick_mc():
    return MCSettings(nu_samples=16, eifn_samples=32, fantasies=4, candidate_realizations=1)


@pytest.fixture
def quick_optimizer():
    return OptimizerSettings(restarts=2, max_evals=30, raw_samples=32)


@pytest.fixture
def quick_discrete():
    return DiscreteSetConfig(M=3, N_T=3, N_L=3, pool_size=64)


@pytest.fixture
def tiny_problem_file(tmp_path):
    """Two-node cascade with polynomial nodes, small enough for full BO loops in tests."""
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "name": "tiny",
        "K": 2,
        "parents": [[], [1]],
        "ext_inputs": [[1], []],
        "domain": [[-1.0, 1.0]],
        "parent_ranges": [[], [[-1.0, 1.0]]],
        "costs": [1.0, 3.0],
        "budget": 6,
        "functions": [
            {"kind": "polynomial", "coefficients": [1.0, -0.5], "exponents": [[1], [2]]},
            {"kind": "polynomial", "coefficients": [-1.0, 0.4], "exponents": [[2], [1]]},
        ],
    }))
    return path


@pytest.fixture
def quick_config(tiny_problem_file, quick_mc, quick_optimizer, quick_discrete, tmp_path):
    return ExperimentConfig(
        problem=str(tiny_problem_file),
        algo="fast-pkgfn",
        budget=6.0,
        trials=1,
        seed=11,
        discrete=quick_discrete,
        mc=quick_mc,
        optimizer=quick_optimizer,
        output_dir=str(tmp_path / "out"),
        record_timing=False,
    )
