from unittest import TestCase, mock

import numpy as np

from reml.finitediff import finite_difference_gradient, finite_difference_jacobian, relative_error, relative_step
from reml.infomat import (DenseDerivatives, average_information_dense, average_information_fast, evaluate_fast,
                          fisher_information, observed_information, score, score_fast, splitting_residual)
from reml.likelihood import loglik_via_C
from reml.linalg import ldlt_factor
from reml.model import Parameterization, ThetaVector, variance_second_derivative
from reml.simulate import SimulationPlan, monte_carlo_mean
from tests.helpers import instance


def scaled(a, b) -> float:
    return float(np.max(np.abs(a - b)) / (1 + np.max(np.abs(b))))


class ScoreTests(TestCase):

    def test_fixed_effects_only(self):
        spec, _ = instance(1, 'none', n=15, p=3)
        rss = spec.y @ (spec.y - spec.X @ np.linalg.lstsq(spec.X, spec.y, rcond=None)[0])
        sigma2 = 0.8
        expected = -0.5 * ((spec.n - spec.p) / sigma2 - rss / sigma2 ** 2)
        s = score(spec, ThetaVector.of(spec, sigma2))
        self.assertAlmostEqual(float(s[0]), expected, places=9)
        at_optimum = score(spec, ThetaVector.of(spec, rss / (spec.n - spec.p)))
        self.assertAlmostEqual(float(at_optimum[0]), 0.0, places=9)

    def test_matches_finite_differences(self):
        for seed in range(10):
            structure = ('iid', 'ar1+iid')[seed % 2]
            spec, theta = instance(seed, structure, n=20)

            def loglik(x):
                return loglik_via_C(spec, ThetaVector.from_array(spec, x)).value

            fd = finite_difference_gradient(loglik, theta.as_array(), relative_step(1e-5))
            with self.subTest(seed=seed):
                self.assertLessEqual(relative_error(score(spec, theta), fd), 1e-5)

    def test_fast_matches_dense(self):
        for seed in range(10):
            for structure in ('iid', 'ar1', 'ar1+iid', 'none'):
                for parameterization in Parameterization:
                    spec, theta = instance(seed, structure, parameterization=parameterization)
                    with self.subTest(seed=seed, structure=structure, parameterization=parameterization):
                        self.assertLessEqual(scaled(score_fast(spec, theta), score(spec, theta)), 1e-8)


class InformationTests(TestCase):

    def test_fixed_effects_fisher(self):
        spec, _ = instance(2, 'none', n=15, p=3)
        sigma2 = 1.7
        fisher = fisher_information(spec, ThetaVector.of(spec, sigma2))
        self.assertAlmostEqual(float(fisher[0, 0]), (spec.n - spec.p) / (2 * sigma2 ** 2), places=9)

    def test_observed_matches_score_jacobian(self):
        for seed in range(10):
            structure = ('iid', 'ar1+iid')[seed % 2]
            spec, theta = instance(seed, structure, n=20)

            def s(x):
                return score(spec, ThetaVector.from_array(spec, x))

            jacobian = finite_difference_jacobian(s, theta.as_array(), 1e-5)
            with self.subTest(seed=seed):
                self.assertLessEqual(relative_error(observed_information(spec, theta), -jacobian), 1e-4)

    def test_symmetry(self):
        spec, theta = instance(3, 'ar1+iid')
        bundle = DenseDerivatives(spec, theta).bundle()
        for name in ('observed', 'fisher', 'average', 'splitting'):
            m = getattr(bundle, name)
            with self.subTest(matrix=name):
                self.assertLessEqual(np.max(np.abs(m - m.T)), 1e-10 * (1 + np.max(np.abs(m))))

    def test_positive_semidefinite(self):
        for seed in range(5):
            spec, theta = instance(seed, 'ar1+iid')
            self.assertGreaterEqual(np.min(np.linalg.eigvalsh(fisher_information(spec, theta))), -1e-10)
            self.assertGreaterEqual(np.min(np.linalg.eigvalsh(average_information_dense(spec, theta))), -1e-10)

    def test_linear_average_is_mean_of_observed_and_fisher(self):
        for seed in range(5):
            spec, theta = instance(seed, 'iid', parameterization=Parameterization.component)
            self.assertTrue(spec.is_linear)
            bundle = DenseDerivatives(spec, theta).bundle()
            with self.subTest(seed=seed):
                self.assertLessEqual(scaled(bundle.average, (bundle.observed + bundle.fisher) / 2), 1e-9)
                self.assertLessEqual(np.max(np.abs(bundle.splitting)), 1e-10)
                np.testing.assert_allclose(
                    bundle.observed,
                    2 * bundle.average - bundle.fisher,
                    atol=1e-9 * (1 + np.max(np.abs(bundle.observed))))

    def test_splitting_identity(self):
        for seed in range(5):
            spec, theta = instance(seed, 'ar1+iid')
            dense = DenseDerivatives(spec, theta)
            P = dense.P
            xi = P @ spec.y
            expected = np.zeros((spec.n_params, spec.n_params))
            for i in range(spec.n_params):
                for j in range(spec.n_params):
                    m = variance_second_derivative(spec, theta, i, j)
                    expected[i, j] = 0.25 * (np.sum(P * m) - xi @ m @ xi)
            bundle = dense.bundle()
            with self.subTest(seed=seed):
                self.assertLessEqual(scaled((bundle.observed + bundle.fisher) / 2 - bundle.average, expected), 1e-9)
                self.assertLessEqual(scaled(bundle.splitting, expected), 1e-9)

    def test_splitting_nonzero_for_ar1(self):
        spec, theta = instance(6, 'ar1')
        self.assertGreater(np.max(np.abs(splitting_residual(spec, theta))), 0.0)


class FastPathTests(TestCase):

    def test_average_information(self):
        for seed in range(10):
            for structure in ('iid', 'ar1+iid', 'none'):
                spec, theta = instance(seed, structure)
                with self.subTest(seed=seed, structure=structure):
                    self.assertLessEqual(scaled(average_information_fast(spec, theta),
                                                average_information_dense(spec, theta)), 1e-8)

    def test_sparse_factorization(self):
        spec, theta = instance(7, 'ar1+iid', n=120, groups=40)
        fast = evaluate_fast(spec, theta, sparse_min_order=1)
        self.assertTrue(fast.system.factorization.is_sparse)
        dense = DenseDerivatives(spec, theta)
        self.assertLessEqual(scaled(fast.average, dense.average()), 1e-8)
        self.assertLessEqual(scaled(fast.score, dense.score()), 1e-8)

    def test_single_factorization_per_evaluation(self):
        spec, theta = instance(8, 'ar1+iid')
        with mock.patch('reml.mme.ldlt_factor', wraps=ldlt_factor) as factor:
            evaluate_fast(spec, theta)
        self.assertEqual(factor.call_count, 1)
        with mock.patch('reml.mme.ldlt_factor', wraps=ldlt_factor) as factor:
            average_information_fast(spec, theta)
        self.assertEqual(factor.call_count, 1)

    def test_loglik_matches(self):
        spec, theta = instance(9, 'ar1+iid')
        self.assertAlmostEqual(evaluate_fast(spec, theta).loglik.value, loglik_via_C(spec, theta).value, places=10)

    def test_without_average(self):
        spec, theta = instance(10, 'iid')
        self.assertIsNone(evaluate_fast(spec, theta, with_average=False).average)


class ExpectationTests(TestCase):
    """
    Monte-Carlo checks: the observed information averages to the Fisher
    information, and the splitting residual averages to zero.
    """
    replicates = 2000

    def _mean(self, structure: str, statistic_name: str, seed: int):
        spec, theta = instance(seed, structure, n=10, groups=3)
        dense = DenseDerivatives(spec, theta)
        plan = SimulationPlan(spec=spec, theta=theta, tau=np.zeros(spec.p), replicates=self.replicates, seed=seed)
        return dense, monte_carlo_mean(plan, getattr(dense, statistic_name))

    def test_observed_averages_to_fisher(self):
        dense, (mean, se) = self._mean('ar1+iid', 'observed', 21)
        fisher = dense.fisher()
        self.assertTrue(np.all(np.abs(mean - fisher) <= 3 * se), f'{mean} vs {fisher} (se {se})')

    def test_splitting_averages_to_zero(self):
        _, (mean, se) = self._mean('ar1', 'splitting', 22)
        self.assertTrue(np.all(np.abs(mean) <= 3 * se + 1e-12), f'{mean} (se {se})')

    def test_quadratic_form_expectation(self):
        spec, theta = instance(23, 'ar1+iid', n=10, groups=3)
        P = DenseDerivatives(spec, theta).P
        plan = SimulationPlan(spec=spec, theta=theta, tau=np.ones(spec.p), replicates=self.replicates, seed=23)
        mean, se = monte_carlo_mean(plan, lambda y: np.array([y @ P @ y]))
        self.assertLessEqual(abs(mean[0] - (spec.n - spec.p)), 3 * se[0])
