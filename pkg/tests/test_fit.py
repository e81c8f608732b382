"""Fit-module tests: likelihoods, multi-start estimation, information."""

import math

import numpy as np
import pytest

from eqprior.exprtree import parse_canonical, parse_expression, resolve_basis
from eqprior.fit import (
    CompiledTree,
    Dataset,
    FitConfig,
    FitStatus,
    _residual_loglike,
    fit_many,
    fit_params,
    log_likelihood,
    negative_hessian,
    observed_information,
)

SR = resolve_basis("sr")
LOG_2PI = math.log(2 * math.pi)


class TestDataset:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Dataset.iid(np.empty(0), np.empty(0), 1.0)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            Dataset.iid(np.zeros(3), np.zeros(3), 0.0)

    def test_non_pd_covariance_rejected(self):
        with pytest.raises(np.linalg.LinAlgError):
            Dataset.fullcov(np.zeros(2), np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValueError):
            Dataset.fullcov(np.zeros(2), np.zeros(2), np.array([[1.0, 0.5], [0.1, 1.0]]))


class TestLogLikelihood:
    def test_perfect_fit_constants_only(self):
        tree = parse_expression("a", SR)
        data = Dataset.iid(np.zeros(3), np.full(3, 3.0), 1.0)
        assert log_likelihood(tree, [3.0], data) == pytest.approx(-1.5 * LOG_2PI)

    def test_unit_residuals(self):
        tree = parse_expression("a", SR)
        data = Dataset.iid(np.zeros(2), np.array([1.0, -1.0]), 1.0)
        assert log_likelihood(tree, [0.0], data) == pytest.approx(-1.0 - LOG_2PI)

    def test_domain_error_gives_minus_inf(self):
        tree = parse_canonical("log(x)")
        data = Dataset.iid(np.array([-1.0]), np.array([0.0]), 1.0)
        assert log_likelihood(tree, [], data) == -math.inf

    def test_dimension_mismatch(self):
        tree = parse_expression("a*x", SR)
        with pytest.raises(ValueError):
            log_likelihood(tree, [1.0, 2.0], Dataset.iid(np.ones(2), np.ones(2), 1.0))

    def test_fullcov_diagonal_matches_iid(self):
        tree = parse_expression("a*x", SR)
        x = np.linspace(1, 3, 4)
        y = 2.0 * x + np.array([0.1, -0.2, 0.0, 0.3])
        sigma = 0.7
        iid = Dataset.iid(x, y, sigma)
        cov = Dataset.fullcov(x, y, np.eye(4) * sigma**2)
        assert log_likelihood(tree, [2.0], iid) == pytest.approx(
            log_likelihood(tree, [2.0], cov), rel=1e-12)

    def test_fullcov_matches_dense_formula(self):
        tree = parse_expression("a", SR)
        rng = np.random.default_rng(3)
        base = rng.normal(size=(4, 4))
        cov = base @ base.T + 4.0 * np.eye(4)
        y = rng.normal(size=4)
        data = Dataset.fullcov(np.zeros(4), y, cov)
        r = np.full(4, 0.3) - y
        expected = float(-0.5 * r @ np.linalg.solve(cov, r)
                         - 0.5 * np.linalg.slogdet(2 * np.pi * cov)[1])
        assert log_likelihood(tree, [0.3], data) == pytest.approx(expected, rel=1e-10)


class TestFitParams:
    def test_sample_mean_closed_form(self):
        tree = parse_expression("a", SR)
        data = Dataset.iid(np.zeros(3), np.full(3, 3.0), 1.0)
        res = fit_params(tree, data, FitConfig(restarts=4))
        assert res.theta_hat[0] == pytest.approx(3.0, abs=1e-7)
        assert res.logL_hat == pytest.approx(-1.5 * LOG_2PI, abs=1e-9)
        assert res.status == FitStatus.OK

    def test_linear_least_squares_oracle(self):
        x = np.linspace(0.1, 5, 60)
        data = Dataset.iid(x, 2.43 * x, 1.0)
        res = fit_params(parse_expression("a*x", SR), data, FitConfig(restarts=6))
        assert res.theta_hat[0] == pytest.approx(2.43, abs=1e-6)

    def test_cubic_mock_recovery_within_three_sigma(self):
        # y = t0 + t1 x^3 with noise; compare against estimated standard errors
        rng = np.random.default_rng(7)
        x = rng.uniform(1.0, 2.0, 300)
        t0, t1, sigma = 0.7, 0.3, 0.05
        y = t0 + t1 * x**3 + rng.normal(0, sigma, 300)
        data = Dataset.iid(x, y, sigma)
        res = fit_params(parse_expression("a0 + a1*x^3", SR), data, FitConfig(restarts=8))
        assert res.status == FitStatus.OK
        cov = np.linalg.inv(res.info)
        for est, true, var in zip(res.theta_hat, (t0, t1), np.diag(cov)):
            assert abs(est - true) < 3.0 * math.sqrt(var)

    def test_p0_returns_immediately(self):
        tree = parse_expression("x", SR)
        data = Dataset.iid(np.ones(5), np.ones(5), 1.0)
        res = fit_params(tree, data)
        assert res.theta_hat.shape == (0,) and res.info.shape == (0, 0)
        assert res.status == FitStatus.OK

    def test_all_starts_invalid(self):
        tree = parse_canonical("log(x)")  # p = 0 and non-finite everywhere
        data = Dataset.iid(np.array([-2.0, -1.0]), np.zeros(2), 1.0)
        res = fit_params(tree, data)
        assert res.status == FitStatus.INVALID_DOMAIN
        tree_p = parse_canonical("*(a, log(x))")
        res_p = fit_params(tree_p, data, FitConfig(restarts=3))
        assert res_p.status == FitStatus.INVALID_DOMAIN

    def test_deterministic_given_seed(self):
        x = np.linspace(0.2, 4, 80)
        rng = np.random.default_rng(9)
        data = Dataset.iid(x, np.sqrt(x) + rng.normal(0, 0.2, 80), 0.2)
        tree = parse_expression("a0*pow(x, a1)", SR)
        r1 = fit_params(tree, data, FitConfig(restarts=5, seed=42))
        r2 = fit_params(tree, data, FitConfig(restarts=5, seed=42))
        assert np.array_equal(r1.theta_hat, r2.theta_hat)
        assert r1.logL_hat == r2.logL_hat

    def test_never_below_any_start_value(self):
        from eqprior.fit import _objective, _starts
        from eqprior.exprtree import canonical_form

        x = np.linspace(0.2, 4, 50)
        rng = np.random.default_rng(11)
        data = Dataset.iid(x, 1.3 + 0.13 * np.sqrt(x) + rng.normal(0, 0.1, 50), 0.1)
        tree = parse_expression("a0 + a1*sqrt(x)", SR)
        config = FitConfig(restarts=6, seed=5)
        res = fit_params(tree, data, config)
        f = _objective(CompiledTree(tree), data, False)
        for start in _starts(2, config, canonical_form(tree)):
            assert res.logL_hat >= -f(start) - 1e-9

    def test_fit_many_matches_serial_and_parallel(self):
        x = np.linspace(0.2, 4, 60)
        rng = np.random.default_rng(13)
        data = Dataset.iid(x, np.sqrt(x) + rng.normal(0, 0.2, 60), 0.2)
        trees = [parse_canonical(s) for s in
                 ["sqrt(x)", "*(a, x)", "+(a, x)", "pow(x, a)"] * 10]
        serial = fit_many(trees, data, FitConfig(restarts=4), workers=1)
        parallel = fit_many(trees, data, FitConfig(restarts=4), workers=2)
        for s, p in zip(serial, parallel):
            assert s.logL_hat == p.logL_hat
            assert np.array_equal(s.theta_hat, p.theta_hat)


class TestObservedInformation:
    def test_constant_model_exact(self):
        tree = parse_expression("a", SR)
        sigma = 0.5
        data = Dataset.iid(np.zeros(20), np.full(20, 1.0), sigma)
        info = observed_information(tree, np.array([1.0]), data)
        assert info[0, 0] == pytest.approx(20 / sigma**2, rel=1e-7)

    def test_linear_model_exact(self):
        tree = parse_expression("a*x", SR)
        x = np.linspace(0.5, 2.5, 30)
        data = Dataset.iid(x, 2.0 * x, 1.0)
        info = observed_information(tree, np.array([2.0]), data)
        assert info[0, 0] == pytest.approx(float(np.sum(x**2)), rel=1e-7)

    def test_quadratic_target_near_machine_precision(self):
        a_mat = np.array([[4.0, 1.0], [1.0, 3.0]])

        def f(theta):
            return -0.5 * theta @ a_mat @ theta

        hess = negative_hessian(f, np.array([0.3, -0.7]))
        assert np.allclose(hess, a_mat, rtol=1e-6)

    def test_symmetry_enforced(self):
        tree = parse_expression("a0*pow(x, a1)", SR)
        x = np.linspace(0.5, 3, 40)
        data = Dataset.iid(x, 1.2 * x**0.7, 0.3)
        info = observed_information(tree, np.array([1.2, 0.7]), data)
        assert np.array_equal(info, info.T)

    @pytest.mark.parametrize("b", [0.1, 0.5])
    def test_tempered_information_scales_determinant(self, b):
        tree = parse_expression("a0 + a1*x*x", SR)
        x = np.linspace(0.5, 2.5, 50)
        rng = np.random.default_rng(17)
        data = Dataset.iid(x, 1.0 + 0.5 * x**2 + rng.normal(0, 0.1, 50), 0.5)
        res = fit_params(tree, data, FitConfig(restarts=6))
        compiled = CompiledTree(tree)

        def tempered(theta):
            return b * _residual_loglike(compiled(theta, data.x), data)

        info_b = negative_hessian(tempered, res.theta_hat)
        det_ratio = np.linalg.det(info_b) / (b**2 * np.linalg.det(res.info))
        assert det_ratio == pytest.approx(1.0, rel=1e-6)

    def test_posterior_information_adds_prior_curvature(self):
        tree = parse_expression("a", SR)
        data = Dataset.iid(np.zeros(10), np.full(10, 2.0), 1.0)
        tau = 0.5

        def log_prior(theta):
            return -0.5 * float(theta[0]) ** 2 / tau**2

        info = observed_information(tree, np.array([2.0]), data,
                                    at="posterior", log_prior=log_prior)
        assert info[0, 0] == pytest.approx(10 + 1 / tau**2, rel=1e-6)
