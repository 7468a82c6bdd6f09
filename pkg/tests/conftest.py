import numpy as np
import pytest
import scipy.sparse

from spatmcmc import (
    GaussianApproximation,
    Hyperparameters,
    SpatialDataset,
    build_precision_matrix,
)
from spatmcmc.cli import lattice_adjacency, synthesize_dataset
from spatmcmc.model import make_log_target
from spatmcmc.proposal import FitConfig, SpatialProposal, fit_proposal
from spatmcmc.samplers import BoundConfig, optimize_bound


def adjacency_from_edges(n, edges):
    rows, cols = [], []
    for i, j in edges:
        rows += [i, j]
        cols += [j, i]
    return scipy.sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n)
    )


def path_adjacency(n):
    return adjacency_from_edges(n, [(i, i + 1) for i in range(n - 1)])


@pytest.fixture(scope="session")
def unit_hyper():
    return Hyperparameters(1.0, 1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def wide_hyper():
    return Hyperparameters(1.0, 100.0, 1.0, 100.0)


@pytest.fixture(scope="session")
def path2_dataset():
    return SpatialDataset(np.array([3, 2]), np.array([1.0, 1.0]), path_adjacency(2))


@pytest.fixture(scope="session")
def lattice10():
    data, truth = synthesize_dataset(2, 5, 10.0, 10.0, 50.0, seed=42)
    return data, truth


@pytest.fixture(scope="session")
def lattice87():
    data, truth = synthesize_dataset(3, 29, 10.0, 10.0, 50.0, seed=7)
    return data, truth


@pytest.fixture(scope="session")
def approx10(lattice10, wide_hyper):
    data, _ = lattice10
    q = build_precision_matrix(data.adjacency)
    return GaussianApproximation(data, wide_hyper, q)


@pytest.fixture(scope="session")
def approx87(lattice87, wide_hyper):
    data, _ = lattice87
    q = build_precision_matrix(data.adjacency)
    return GaussianApproximation(data, wide_hyper, q)


def _fitted_proposal(approx):
    spec = fit_proposal(approx.log_s1, FitConfig(), delta=approx.delta)
    return SpatialProposal(spec, approx)


@pytest.fixture(scope="session")
def prop10(approx10):
    return _fitted_proposal(approx10)


@pytest.fixture(scope="session")
def prop87(approx87):
    return _fitted_proposal(approx87)


@pytest.fixture(scope="session")
def target10(lattice10, wide_hyper):
    data, _ = lattice10
    return make_log_target(data, wide_hyper, build_precision_matrix(data.adjacency))


@pytest.fixture(scope="session")
def target87(lattice87, wide_hyper):
    data, _ = lattice87
    return make_log_target(data, wide_hyper, build_precision_matrix(data.adjacency))


@pytest.fixture(scope="session")
def bound10(target10, prop10):
    rng = np.random.default_rng(1010)
    return optimize_bound(target10, prop10, rng, BoundConfig(log_head=2))


@pytest.fixture(scope="session")
def bound87(target87, prop87):
    rng = np.random.default_rng(8787)
    return optimize_bound(target87, prop87, rng, BoundConfig(log_head=2))


def random_spd_band(rng, n, bandwidth):
    """Random symmetric positive definite matrix with the given bandwidth."""
    a = np.zeros((n, n))
    for d in range(bandwidth + 1):
        vals = rng.normal(size=n - d)
        a += np.diag(vals, -d)
        if d:
            a += np.diag(vals, d)
    # diagonal dominance guarantees positive definiteness
    a += np.eye(n) * (np.abs(a).sum(axis=1).max() + 1.0)
    return a
