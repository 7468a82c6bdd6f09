import numpy as np
import pytest
import scipy.sparse

from spatmcmc import model
from spatmcmc.model import (
    DisconnectedGraphError,
    Hyperparameters,
    InvalidDatasetError,
    InvalidStateError,
    ModelError,
    ModelState,
    PosteriorOverflowError,
    SpatialDataset,
    build_precision_matrix,
    log_unnormalized_posterior,
    make_log_target,
)

from conftest import adjacency_from_edges, path_adjacency


class TestBuildPrecisionMatrix:
    def test_path_two_nodes(self):
        q = build_precision_matrix(path_adjacency(2))
        np.testing.assert_array_equal(q.Q.toarray(), [[1, -1], [-1, 1]])
        assert q.rank_deficiency == 1
        assert q.m == 1

    def test_triangle(self):
        adj = adjacency_from_edges(3, [(0, 1), (1, 2), (0, 2)])
        q = build_precision_matrix(adj).Q.toarray()
        np.testing.assert_array_equal(np.diag(q), [2, 2, 2])
        off = q - np.diag(np.diag(q))
        assert np.all(off[off != 0] == -1)
        assert np.count_nonzero(off) == 6

    def test_rook_grid_2x2(self):
        adj = adjacency_from_edges(4, [(0, 1), (0, 2), (1, 3), (2, 3)])
        q = build_precision_matrix(adj).Q.toarray()
        np.testing.assert_array_equal(np.diag(q), [2, 2, 2, 2])
        assert q[0, 1] == q[0, 2] == q[1, 3] == q[2, 3] == -1
        assert q[0, 3] == q[1, 2] == 0

    def test_row_sums_exactly_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(2, 25))
            edges = {(i, i + 1) for i in range(n - 1)}
            extra = rng.integers(0, n, size=(5, 2))
            edges |= {(min(int(a), int(b)), max(int(a), int(b))) for a, b in extra if a != b}
            q = build_precision_matrix(adjacency_from_edges(n, edges))
            sums = np.asarray(q.Q.sum(axis=1)).ravel()
            assert np.all(sums == 0)  # exact integer arithmetic

    def test_positive_semidefinite(self):
        adj = adjacency_from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
        q = build_precision_matrix(adj)
        eig = np.linalg.eigvalsh(q.Q.toarray().astype(float))
        assert eig.min() > -1e-12
        assert len(q.nonzero_eigenvalues) == 4
        assert np.all(q.nonzero_eigenvalues > 1e-10)

    def test_disconnected_graph_names_components(self):
        adj = adjacency_from_edges(4, [(0, 1), (2, 3)])
        with pytest.raises(DisconnectedGraphError) as excinfo:
            build_precision_matrix(adj)
        assert excinfo.value.components == [[0, 1], [2, 3]]


class TestDatasetValidation:
    def test_rejects_negative_counts(self):
        with pytest.raises(InvalidDatasetError):
            SpatialDataset(np.array([-1, 2]), np.array([1.0, 1.0]), path_adjacency(2))

    def test_rejects_nonpositive_expected(self):
        with pytest.raises(InvalidDatasetError):
            SpatialDataset(np.array([1, 2]), np.array([1.0, 0.0]), path_adjacency(2))

    def test_rejects_self_loops(self):
        adj = scipy.sparse.csr_matrix(np.array([[1, 1], [1, 0]]))
        with pytest.raises(InvalidDatasetError):
            SpatialDataset(np.array([1, 2]), np.array([1.0, 1.0]), adj)

    def test_rejects_asymmetric(self):
        adj = scipy.sparse.csr_matrix(np.array([[0, 1], [0, 0]]))
        with pytest.raises(InvalidDatasetError):
            SpatialDataset(np.array([1, 2]), np.array([1.0, 1.0]), adj)

    def test_rejects_disconnected(self):
        adj = adjacency_from_edges(4, [(0, 1), (2, 3)])
        with pytest.raises(DisconnectedGraphError):
            SpatialDataset(np.array([1, 2, 3, 4]), np.ones(4), adj)

    def test_zero_counts_allowed(self):
        data = SpatialDataset(np.array([0, 2]), np.array([1.0, 1.0]), path_adjacency(2))
        assert data.counts[0] == 0


class TestHyperparameters:
    def test_requires_positive(self):
        with pytest.raises(ModelError):
            Hyperparameters(1.0, 0.0, 1.0, 1.0)

    def test_requires_alpha_h_at_least_one(self):
        with pytest.raises(ModelError):
            Hyperparameters(0.5, 1.0, 1.0, 1.0)


class TestLogPosterior:
    def test_single_region_hand_value(self):
        # all quadratic and log terms vanish; single-node Q is the zero matrix
        adj = scipy.sparse.csr_matrix((1, 1))
        data = SpatialDataset(np.array([0]), np.array([1.0]), adj)
        q = build_precision_matrix(adj)
        assert q.m == 0
        state = ModelState(np.zeros(1), np.zeros(1), 1.0, 1.0)
        hyper = Hyperparameters(1.0, 1.0, 1.0, 1.0)
        value = log_unnormalized_posterior(state, data, hyper, q)
        assert value == pytest.approx(-3.0)

    def test_two_region_hand_value(self, path2_dataset, unit_hyper):
        # term by term: likelihood -2, prior logs 1.5*log 2, scale terms -2 - 2
        q = build_precision_matrix(path2_dataset.adjacency)
        state = ModelState(np.zeros(2), np.zeros(2), 2.0, 2.0)
        value = log_unnormalized_posterior(state, path2_dataset, unit_hyper, q)
        assert value == pytest.approx(-6.0 + 1.5 * np.log(2.0), rel=1e-12)

    def test_shift_changes_only_gaussian_terms(self, path2_dataset, unit_hyper):
        q = build_precision_matrix(path2_dataset.adjacency)
        rng = np.random.default_rng(1)
        theta = rng.normal(size=2)
        phi = rng.normal(size=2)
        shift = rng.normal(size=2)
        s1 = ModelState(theta, phi, 1.5, 0.7)
        s2 = ModelState(theta + shift, phi - shift, 1.5, 0.7)  # theta+phi unchanged
        v1 = log_unnormalized_posterior(s1, path2_dataset, unit_hyper, q)
        v2 = log_unnormalized_posterior(s2, path2_dataset, unit_hyper, q)
        quad = lambda s: (
            -0.5 * s.tau_h * s.theta @ s.theta
            - 0.5 * s.tau_c * s.phi @ (q.Q.toarray() @ s.phi)
        )
        assert v2 - v1 == pytest.approx(quad(s2) - quad(s1), rel=1e-10)

    def test_term_by_term_on_random_instances(self, unit_hyper):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            adj = path_adjacency(n)
            data = SpatialDataset(
                rng.integers(0, 10, n), rng.uniform(0.5, 3.0, n), adj
            )
            q = build_precision_matrix(adj)
            theta = rng.normal(size=n)
            phi = rng.normal(size=n)
            th, tc = rng.uniform(0.2, 5.0, 2)
            state = ModelState(theta, phi, th, tc)
            mu = theta + phi
            expected = (
                float(mu @ data.counts - np.sum(data.expected * np.exp(mu)))
                - 0.5 * th * theta @ theta
                - 0.5 * tc * phi @ (q.Q.toarray() @ phi)
                + (n / 2 + unit_hyper.alpha_h - 1) * np.log(th)
                + ((n - 1) / 2 + unit_hyper.alpha_c - 1) * np.log(tc)
                - th / unit_hyper.beta_h
                - tc / unit_hyper.beta_c
            )
            got = log_unnormalized_posterior(state, data, unit_hyper, q)
            assert got == pytest.approx(expected, rel=1e-12, abs=1e-10)

    def test_decreases_without_bound_along_theta_rays(self, path2_dataset, unit_hyper):
        q = build_precision_matrix(path2_dataset.adjacency)
        rng = np.random.default_rng(3)
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction)
        values = []
        for scale in [1.0, 10.0, 100.0]:
            state = ModelState(scale * direction, np.zeros(2), 1.0, 1.0)
            values.append(log_unnormalized_posterior(state, path2_dataset, unit_hyper, q))
        assert values[0] > values[1] > values[2]
        assert values[2] < -1000

    def test_overflow_raises_structured_error(self, path2_dataset, unit_hyper):
        q = build_precision_matrix(path2_dataset.adjacency)
        state = ModelState(np.array([800.0, 0.0]), np.zeros(2), 1.0, 1.0)
        with pytest.raises(PosteriorOverflowError):
            log_unnormalized_posterior(state, path2_dataset, unit_hyper, q)

    def test_vector_target_maps_bad_states_to_neg_inf(self, path2_dataset, unit_hyper):
        q = build_precision_matrix(path2_dataset.adjacency)
        lt = make_log_target(path2_dataset, unit_hyper, q)
        assert lt(np.array([-1.0, 1.0, 0, 0, 0, 0])) == -np.inf
        assert lt(np.array([1.0, 1.0, 800.0, 0, 0, 0])) == -np.inf
        state = ModelState(np.zeros(2), np.zeros(2), 2.0, 2.0)
        assert lt(state.to_vector()) == pytest.approx(
            log_unnormalized_posterior(state, path2_dataset, unit_hyper, q)
        )


class TestModelState:
    def test_requires_positive_precisions(self):
        with pytest.raises(InvalidStateError):
            ModelState(np.zeros(2), np.zeros(2), 0.0, 1.0)

    def test_vector_round_trip(self):
        state = ModelState(np.array([1.0, 2.0]), np.array([3.0, 4.0]), 0.5, 0.25)
        back = ModelState.from_vector(state.to_vector(), 2)
        np.testing.assert_array_equal(back.theta, state.theta)
        np.testing.assert_array_equal(back.phi, state.phi)
        assert (back.tau_h, back.tau_c) == (state.tau_h, state.tau_c)
