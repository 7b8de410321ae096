import numpy as np
import pytest

from plebo import gp
from plebo.config import DEFAULT_CONFIG
from plebo.errors import FitFailed, LikelihoodUndefined
from plebo.schema import HyperParams, HyperPrior
from tests.conftest import dense_lml

LOG_2PI = np.log(2 * np.pi)


def hp(l, v, noise=1e-4):
    return HyperParams(lengthscale=l, signal_variance=v, noise_variance=noise)


class TestKernel:
    def test_zero_distance(self):
        assert gp.rbf_kernel([0.0, 0.0], hp(0.7, 2.5)) == 2.5

    def test_analytic_values(self):
        assert gp.rbf_kernel([np.sqrt(2.0), 0.0], hp(1.0, 1.0)) == pytest.approx(np.exp(-1.0), abs=1e-12)
        assert gp.rbf_kernel([0.1, 0.0], hp(0.05, 4.0)) == pytest.approx(4 * np.exp(-2.0), abs=1e-12)

    def test_symmetric(self, rng):
        tau = rng.standard_normal(2)
        assert gp.rbf_kernel(tau, hp(0.3, 1.0)) == gp.rbf_kernel(-tau, hp(0.3, 1.0))


class TestGram:
    def test_single_point(self):
        K = gp.gram(gp.Dataset(X=[[0.2, 0.4]], y=[1.0]), hp(0.5, 2.0, 0.1))
        np.testing.assert_allclose(K, [[2.1]])

    def test_duplicate_inputs(self):
        K = gp.gram(gp.Dataset(X=[[0.3, 0.3], [0.3, 0.3]], y=[0.0, 0.0]), hp(0.5, 2.0, 0.0))
        np.testing.assert_allclose(K, [[2.0, 2.0], [2.0, 2.0]])

    def test_matches_pairwise_loop(self, rng, make_dataset):
        D = make_dataset(rng, 4)
        theta = hp(0.4, 1.3, 1e-3)
        K = gp.gram(D, theta)
        for i in range(4):
            for j in range(4):
                expected = gp.rbf_kernel(D.X[i] - D.X[j], theta) + (theta.noise_variance if i == j else 0.0)
                assert K[i, j] == pytest.approx(expected, abs=1e-14)
        np.testing.assert_array_equal(K, K.T)
        np.testing.assert_array_equal(np.diag(K), np.full(4, theta.signal_variance + theta.noise_variance))


class TestLogMarginalLikelihood:
    def test_standard_normal(self):
        D = gp.Dataset(X=[[0.0, 0.0]], y=[0.0])
        assert gp.log_marginal_likelihood(D, hp(1.0, 0.9, 0.1)) == pytest.approx(-0.5 * LOG_2PI, abs=1e-12)

    def test_shifted(self):
        D = gp.Dataset(X=[[0.0, 0.0]], y=[2.0])
        assert gp.log_marginal_likelihood(D, hp(1.0, 0.9, 0.1)) == pytest.approx(-2.0 - 0.5 * LOG_2PI, abs=1e-12)

    def test_empty_dataset(self):
        assert gp.log_marginal_likelihood(gp.Dataset.empty(2), hp(1.0, 1.0)) == 0.0

    def test_matches_dense_oracle(self, rng, make_dataset):
        for _ in range(100):
            n = int(rng.integers(1, 9))
            D = make_dataset(rng, n)
            theta = hp(float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.2, 3.0)), 1e-2)
            assert gp.log_marginal_likelihood(D, theta) == pytest.approx(dense_lml(D, theta), abs=1e-8)

    def test_order_invariant(self, rng, make_dataset):
        D = make_dataset(rng, 6)
        perm = rng.permutation(6)
        shuffled = gp.Dataset(X=D.X[perm], y=D.y[perm])
        theta = hp(0.3, 1.0)
        assert gp.log_marginal_likelihood(D, theta) == pytest.approx(gp.log_marginal_likelihood(shuffled, theta), abs=1e-9)

    def test_undefined_for_singular_gram(self, monkeypatch):
        monkeypatch.setattr(DEFAULT_CONFIG.gp, "JITTER_LADDER", [0.0])
        D = gp.Dataset(X=np.zeros((3, 2)), y=[0.0, 1.0, 2.0])
        with pytest.raises(LikelihoodUndefined):
            gp.log_marginal_likelihood(D, hp(1.0, 1.0, 0.0))


class TestGradient:
    def test_flat_in_lengthscale_for_single_point(self):
        D = gp.Dataset(X=[[0.5, 0.5]], y=[1.3])
        assert gp.lml_gradient(D, hp(0.4, 2.0))[0] == pytest.approx(0.0, abs=1e-14)

    def test_single_point_variance_gradient(self):
        y, v, noise = 1.3, 2.0, 0.1
        D = gp.Dataset(X=[[0.5, 0.5]], y=[y])
        s = v + noise
        expected = 0.5 * (y ** 2 / s ** 2 - 1.0 / s) * v
        assert gp.lml_gradient(D, hp(0.4, v, noise))[1] == pytest.approx(expected, rel=1e-12)

    def test_matches_finite_differences(self, rng, make_dataset):
        h = 1e-5
        for _ in range(100):
            n = int(rng.integers(2, 9))
            D = make_dataset(rng, n)
            log_theta = np.log([rng.uniform(0.1, 1.0), rng.uniform(0.3, 3.0)])
            noise = 1e-2
            grad = gp.lml_gradient(D, HyperParams.from_log_array(log_theta, noise))
            for k in range(2):
                step = np.zeros(2)
                step[k] = h
                up = gp.log_marginal_likelihood(D, HyperParams.from_log_array(log_theta + step, noise))
                down = gp.log_marginal_likelihood(D, HyperParams.from_log_array(log_theta - step, noise))
                fd = (up - down) / (2 * h)
                assert grad[k] == pytest.approx(fd, rel=1e-4, abs=1e-6)


class TestPosteriorPredictive:
    def test_interpolates_observations(self):
        D = gp.Dataset(X=[[0.1, 0.1], [0.6, 0.2], [0.4, 0.9]], y=[1.0, -0.5, 2.0])
        pred = gp.posterior_predictive(D, hp(0.3, 1.0, 0.0), D.X)
        np.testing.assert_allclose(pred.mean, D.y, atol=1e-6)
        np.testing.assert_allclose(pred.variance, 0.0, atol=1e-6)

    def test_reverts_to_prior_far_away(self):
        D = gp.Dataset(X=[[0.0, 0.0]], y=[3.0])
        pred = gp.posterior_predictive(D, hp(0.05, 2.0, 0.1), [[50.0, 50.0]], include_noise=True)
        assert pred.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert pred.variance[0] == pytest.approx(2.1, abs=1e-12)

    def test_empty_dataset_gives_prior(self):
        pred = gp.posterior_predictive(gp.Dataset.empty(2), hp(0.3, 1.7, 0.2), np.zeros((4, 2)))
        np.testing.assert_array_equal(pred.mean, np.zeros(4))
        np.testing.assert_array_equal(pred.variance, np.full(4, 1.7))

    def test_matches_dense_formula(self):
        X = np.array([[0.0], [0.5], [1.0]])
        D = gp.Dataset(X=X, y=[0.3, -1.0, 0.8])
        theta = hp(0.4, 1.2, 1e-2)
        x_star = np.array([[0.7]])
        K_inv = np.linalg.inv(gp.gram(D, theta))
        k_star = gp.cross_kernel(x_star, X, theta)[0]
        pred = gp.posterior_predictive(D, theta, x_star)
        assert pred.mean[0] == pytest.approx(k_star @ K_inv @ D.y, abs=1e-10)
        assert pred.variance[0] == pytest.approx(theta.signal_variance - k_star @ K_inv @ k_star, abs=1e-10)

    def test_variance_bounded_by_prior(self, rng, make_dataset):
        D = make_dataset(rng, 8)
        theta = hp(0.2, 1.5, 1e-3)
        pred = gp.posterior_predictive(D, theta, rng.uniform(size=(50, 2)), include_noise=True)
        assert np.all(pred.variance >= 0)
        assert np.all(pred.variance <= theta.signal_variance + theta.noise_variance + 1e-8)


class TestFit:
    def test_beats_generating_hyperparameters(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(50, 2))
        true = hp(0.2, 1.0)
        K = gp.gram(gp.Dataset(X=X, y=np.zeros(50)), true)
        y = np.linalg.cholesky(K) @ rng.standard_normal(50)
        D = gp.Dataset(X=X, y=y)
        fitted = gp.fit_map(D, restarts=5, rng=np.random.default_rng(0))
        assert gp.log_marginal_likelihood(D, fitted) >= gp.log_marginal_likelihood(D, true) - 1e-6

    def test_constant_zero_outputs(self, rng):
        D = gp.Dataset(X=rng.uniform(size=(6, 2)), y=np.zeros(6))
        fitted = gp.fit_map(D, restarts=3, rng=np.random.default_rng(1))
        box = gp.hyperparameter_box([D])
        # zero outputs only push the signal variance down from its start
        assert np.log(fitted.signal_variance) <= box[1, 1] + 1e-9
        best_grid = max(
            gp.log_marginal_likelihood(D, hp(float(l), float(v)))
            for l in np.exp(np.linspace(*box[0], 10))
            for v in np.exp(np.linspace(*box[1], 10))
        )
        assert gp.log_marginal_likelihood(D, fitted) >= best_grid - 1e-3

    def test_prior_dominates_two_points(self):
        D = gp.Dataset(X=[[0.2, 0.2], [0.7, 0.6]], y=[0.1, -0.1])
        prior = HyperPrior(l_shape=400.0, l_scale=0.3 / 400.0, v_shape=400.0, v_scale=0.02 / 400.0)
        fitted = gp.fit_map(D, prior=prior, restarts=5, rng=np.random.default_rng(2))
        assert abs(np.log(fitted.lengthscale) - np.log(0.3)) < 0.2 * abs(np.log(0.3))
        assert abs(np.log(fitted.signal_variance) - np.log(0.02)) < 0.2 * abs(np.log(0.02))

    def test_prior_mode_outside_start_box(self):
        D = gp.Dataset(X=[[0.0, 0.0], [0.64, 0.0]], y=[0.1, -0.1])
        box = np.exp(gp.hyperparameter_box([D]))
        assert box[0, 1] < 2.0 and box[1, 1] < 4.0
        prior = HyperPrior(l_shape=400.0, l_scale=2.0 / 400.0, v_shape=400.0, v_scale=4.0 / 400.0)
        fitted = gp.fit_map(D, prior=prior, restarts=3, rng=np.random.default_rng(4))
        assert abs(np.log(fitted.lengthscale) - np.log(2.0)) < 0.2 * abs(np.log(2.0))
        assert abs(np.log(fitted.signal_variance) - np.log(4.0)) < 0.2 * abs(np.log(4.0))

    def test_trace_non_decreasing(self, rng, make_dataset):
        D = make_dataset(rng, 10)
        result = gp.fit_map_result(D, restarts=4, rng=np.random.default_rng(5))
        for trace in result.traces:
            assert all(b >= a for a, b in zip(trace, trace[1:]))

    def test_needs_two_points(self):
        with pytest.raises(FitFailed):
            gp.fit_map(gp.Dataset(X=[[0.0, 0.0]], y=[1.0]))
