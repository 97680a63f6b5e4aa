"""Tests for the node-level GP model."""

from unittest.mock import patch

import numpy as np
import pytest
from scipy.linalg import LinAlgError
from scipy.linalg import cholesky as real_cholesky

from fnbo import gp
from fnbo.errors import DimensionMismatch, DuplicateInputs, SingularCovariance


def _matern52(r, s):
    return s * (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)


@pytest.fixture
def random_data():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(8, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2
    return X, y


class TestKernel:
    def test_matern_matches_closed_form(self):
        config = gp.KernelConfig(lengthscales=(0.3, 0.7), outputscale=2.0)
        A = np.array([[0.1, 0.2], [0.5, 0.9]])
        B = np.array([[0.4, 0.4]])
        K = gp.kernel(config, A, B)
        r = np.sqrt(((A - B) / [0.3, 0.7]) ** 2 @ np.ones(2))
        np.testing.assert_allclose(K[:, 0], _matern52(r, 2.0))

    def test_rbf_diagonal_is_outputscale(self):
        config = gp.KernelConfig(lengthscales=(0.5,), outputscale=1.7, family=gp.RBF)
        X = np.array([[0.1], [0.6]])
        np.testing.assert_allclose(np.diag(gp.kernel(config, X, X)), [1.7, 1.7])

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            gp.KernelConfig(lengthscales=(0.0,))
        with pytest.raises(ValueError):
            gp.KernelConfig(lengthscales=(1.0,), family="periodic")

    def test_log_params_round_trip(self):
        config = gp.KernelConfig(lengthscales=(0.3, 2.0), outputscale=0.5)
        back = config.with_log_params(config.log_params())
        np.testing.assert_allclose(back.lengthscales, config.lengthscales)
        assert back.outputscale == pytest.approx(0.5)


class TestLogMarginalLikelihood:
    @pytest.mark.parametrize("family", [gp.MATERN52, gp.RBF])
    def test_gradient_matches_finite_differences(self, random_data, family):
        X, y = random_data
        y = (y - y.mean()) / y.std()
        config = gp.KernelConfig(lengthscales=(0.3, 0.5), outputscale=1.3, family=family, jitter=1e-3)
        _, grad = gp.log_marginal_likelihood(config, X, y, with_grad=True)
        theta = config.log_params()
        eps = 1e-6
        numeric = []
        for i in range(theta.size):
            step = np.zeros_like(theta)
            step[i] = eps
            up = gp.log_marginal_likelihood(config.with_log_params(theta + step), X, y)
            down = gp.log_marginal_likelihood(config.with_log_params(theta - step), X, y)
            numeric.append((up - down) / (2 * eps))
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-5)

    def test_matches_dense_formula(self, random_data):
        X, y = random_data
        config = gp.KernelConfig(lengthscales=(0.4, 0.4), outputscale=1.0, jitter=1e-4)
        A = gp.kernel(config, X, X) + 1e-4 * np.eye(len(y))
        A_inv = np.linalg.inv(A)
        ones = np.ones_like(y)
        c = ones @ A_inv @ y / (ones @ A_inv @ ones)
        r = y - c
        expected = -0.5 * r @ A_inv @ r - 0.5 * np.linalg.slogdet(A)[1] - 0.5 * len(y) * np.log(2 * np.pi)
        assert gp.log_marginal_likelihood(config, X, y) == pytest.approx(expected, rel=1e-6)


class TestFromHyperparameters:
    def test_interpolates_training_data(self, single_posterior):
        state = single_posterior.nodes[0]
        mean, var = gp.predict(state, [[0.2], [0.5], [0.8]])
        np.testing.assert_allclose(mean, [0.3, 1.0, -0.2], atol=1e-4)
        assert np.all(var < 1e-4)

    def test_prior_without_data(self):
        state = gp.from_hyperparameters(gp.KernelConfig(lengthscales=(0.5, 0.5), outputscale=2.0))
        mean, var = gp.predict(state, np.array([[0.1, 0.2], [0.9, 0.9]]))
        np.testing.assert_allclose(mean, 0.0)
        np.testing.assert_allclose(var, 2.0)

    def test_posterior_covariance_is_consistent(self, single_posterior):
        state = single_posterior.nodes[0]
        points = np.array([[0.1], [0.35], [0.95]])
        mean, cov = gp.posterior(state, points)
        m2, var = gp.predict(state, points)
        np.testing.assert_allclose(mean, m2)
        np.testing.assert_allclose(np.diag(cov), var, atol=1e-12)
        np.testing.assert_array_equal(cov, cov.T)

    def test_bounds_normalize_inputs(self):
        config = gp.KernelConfig(lengthscales=(0.3,))
        scaled = gp.from_hyperparameters(config, [[2.0], [6.0]], [1.0, -1.0], bounds=([0.0], [10.0]))
        unit = gp.from_hyperparameters(config, [[0.2], [0.6]], [1.0, -1.0])
        np.testing.assert_allclose(gp.predict(scaled, [[4.0]])[0], gp.predict(unit, [[0.4]])[0])

    def test_dimension_mismatch(self, single_posterior):
        with pytest.raises(DimensionMismatch):
            gp.predict(single_posterior.nodes[0], np.zeros((2, 3)))

    def test_duplicate_inputs(self):
        with pytest.raises(DuplicateInputs):
            gp.from_hyperparameters(gp.KernelConfig(lengthscales=(0.3,)), [[0.4], [0.4]], [1.0, 2.0])


class TestJitterEscalation:
    def test_escalates_once(self):
        calls = {"n": 0}

        def flaky(A, lower=True):
            calls["n"] += 1
            if calls["n"] == 1:
                raise LinAlgError("not positive definite")
            return real_cholesky(A, lower=lower)

        with patch("fnbo.gp.cholesky", side_effect=flaky):
            state = gp.from_hyperparameters(gp.KernelConfig(lengthscales=(0.3,)), [[0.1], [0.7]], [0.0, 1.0])
        assert state.config.jitter == pytest.approx(1e-5)
        assert calls["n"] == 2

    def test_gives_up_past_max_jitter(self):
        with patch("fnbo.gp.cholesky", side_effect=LinAlgError("singular")) as mocked:
            with pytest.raises(SingularCovariance):
                gp.from_hyperparameters(gp.KernelConfig(lengthscales=(0.3,)), [[0.1], [0.7]], [0.0, 1.0])
        # 1e-6, 1e-5, 1e-4
        assert mocked.call_count == 3


class TestFit:
    def test_improves_on_initial_guess(self, random_data):
        X, y = random_data
        init = gp.KernelConfig(lengthscales=(0.3, 0.6), outputscale=1.0)
        state = gp.fit(X, y, restarts=2, max_evals=50, seed=0, init=init)
        yn = (y - y.mean()) / y.std()
        fitted = gp.log_marginal_likelihood(state.config, X, yn)
        assert fitted >= gp.log_marginal_likelihood(init, X, yn) - 1e-9
        assert all(gp.LENGTHSCALE_BOUNDS[0] - 1e-9 <= ls <= gp.LENGTHSCALE_BOUNDS[1] + 1e-9
                   for ls in state.config.lengthscales)

    def test_interpolates_after_fit(self, random_data):
        X, y = random_data
        state = gp.fit(X, y, restarts=2, max_evals=50)
        np.testing.assert_allclose(gp.predict(state, X)[0], y, atol=1e-2)

    def test_constant_targets(self):
        state = gp.fit([[0.1], [0.5], [0.9]], [2.0, 2.0, 2.0], restarts=1, max_evals=20)
        np.testing.assert_allclose(gp.predict(state, [[0.3], [0.7]])[0], 2.0, atol=1e-8)

    def test_rejects_duplicates(self):
        with pytest.raises(DuplicateInputs):
            gp.fit([[0.3], [0.3]], [1.0, 2.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            gp.fit(np.zeros((0, 1)), np.zeros(0))


class TestFantasize:
    def test_matches_full_refactorization(self, single_posterior):
        state = single_posterior.nodes[0]
        z, y = np.array([0.35]), 0.4
        fantasy = gp.fantasize(state, z, y)
        full = gp.from_hyperparameters(
            state.config,
            np.vstack([state.train_inputs, [z]]),
            np.append(state.train_targets, y),
            prior_mean=state.prior_mean,
        )
        grid = np.linspace(0, 1, 11)[:, None]
        for a, b in zip(gp.predict(fantasy, grid), gp.predict(full, grid)):
            np.testing.assert_allclose(a, b, atol=1e-8)
        assert state.n == 3

    def test_on_empty_state(self):
        prior = gp.from_hyperparameters(gp.KernelConfig(lengthscales=(0.3,)))
        fantasy = gp.fantasize(prior, [0.5], 1.5)
        assert gp.predict(fantasy, [[0.5]])[0][0] == pytest.approx(1.5, abs=1e-4)

    def test_consistent_duplicate_is_a_no_op(self, single_posterior):
        state = single_posterior.nodes[0]
        assert gp.fantasize(state, [0.5], 1.0) is state

    def test_inconsistent_duplicate(self, single_posterior):
        with pytest.raises(SingularCovariance):
            gp.fantasize(single_posterior.nodes[0], [0.5], 5.0)

    def test_antithetic_fantasies_preserve_the_mean(self, single_posterior):
        state = single_posterior.nodes[0]
        z = np.array([[0.35]])
        mu, var = gp.predict(state, z)
        grid = np.linspace(0, 1, 7)[:, None]
        means = [
            gp.predict(gp.fantasize(state, z[0], mu[0] + u * np.sqrt(var[0])), grid)[0]
            for u in (0.8, -0.8, 1.7, -1.7)
        ]
        np.testing.assert_allclose(np.mean(means, axis=0), gp.predict(state, grid)[0], atol=1e-8)


class TestSamplePath:
    def test_deterministic_per_seed(self, single_posterior):
        state = single_posterior.nodes[0]
        grid = np.linspace(0, 1, 5)[:, None]
        np.testing.assert_array_equal(gp.sample_path(state, 3)(grid), gp.sample_path(state, 3)(grid))
        assert not np.allclose(gp.sample_path(state, 3)(grid), gp.sample_path(state, 4)(grid))

    def test_passes_through_data(self, single_posterior):
        state = single_posterior.nodes[0]
        path = gp.sample_path(state, 0)
        np.testing.assert_allclose(path(state.train_inputs), state.train_targets, atol=1e-3)

    def test_scalar_for_single_point(self):
        state = gp.from_hyperparameters(gp.KernelConfig(lengthscales=(0.3, 0.3)))
        assert isinstance(gp.sample_path(state, 0)(np.array([0.2, 0.4])), float)

    @pytest.mark.slow
    def test_paths_average_to_posterior_mean(self, single_posterior):
        state = single_posterior.nodes[0]
        probe = np.array([[0.35]])
        draws = np.array([gp.sample_path(state, s)(probe)[0] for s in range(400)])
        mu, var = gp.predict(state, probe)
        assert abs(draws.mean() - mu[0]) < 4 * np.sqrt(var[0] / len(draws)) + 0.05
        assert draws.var() == pytest.approx(var[0], rel=0.5)


class TestDirectSolveOracle:
    @pytest.mark.parametrize("instance", range(50))
    def test_posterior_matches_dense_solve(self, instance):
        rng = np.random.default_rng(1000 + instance)
        dim = 1 + instance % 7
        n = min(4 + 3 * dim, 25)
        config = gp.KernelConfig(
            lengthscales=tuple(rng.uniform(0.05, 0.3, size=dim)),
            outputscale=float(rng.uniform(0.5, 2.0)),
            family=gp.MATERN52 if instance % 2 else gp.RBF,
        )
        X = rng.uniform(size=(n, dim))
        y = rng.normal(size=n)
        Q = rng.uniform(size=(6, dim))
        state = gp.from_hyperparameters(config, X, y)

        A = gp.kernel(config, X, X) + config.jitter * config.outputscale * np.eye(n)
        Kq = gp.kernel(config, Q, X)
        expected_mean = Kq @ np.linalg.solve(A, y)
        expected_cov = gp.kernel(config, Q, Q) - Kq @ np.linalg.solve(A, Kq.T)

        mean, cov = gp.posterior(state, Q)
        np.testing.assert_allclose(mean, expected_mean, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(cov, 0.5 * (expected_cov + expected_cov.T), rtol=1e-6, atol=1e-8)
