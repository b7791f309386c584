import logging
from unittest import TestCase, mock

import numpy as np

from reml.exceptions import OracleCapExceeded
from reml.model import Parameterization, ThetaVector, effective_bounds
from reml.verify import verify
from tests.helpers import equal_mean_squares_spec, instance

FINITE_DIFFERENCE_CHECKS = ('score_vs_finite_difference', 'observed_vs_finite_difference', 'information_splitting')


class VerifyTests(TestCase):

    def setUp(self):
        # avoid cluttered console output
        logging.disable(logging.WARNING)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    def test_random_instances_pass(self):
        for seed, structure in enumerate(('iid', 'ar1', 'ar1+iid', 'none')):
            spec, theta = instance(seed, structure, n=15, p=3)
            with self.subTest(structure=structure):
                failed = [c.name for c in verify(spec, theta) if not c.passed]
                self.assertEqual(failed, [])

    def test_component_parameterization(self):
        spec, theta = instance(8, 'ar1+iid', n=15, parameterization=Parameterization.component)
        self.assertTrue(all(c.passed for c in verify(spec, theta)))

    def test_linear_model_has_splitting_check(self):
        spec, theta = instance(2, 'iid', parameterization=Parameterization.component)
        names = [c.name for c in verify(spec, theta)]
        self.assertIn('splitting_vanishes_linear', names)
        spec, theta = instance(2, 'ar1')
        self.assertNotIn('splitting_vanishes_linear', [c.name for c in verify(spec, theta)])

    def test_progress(self):
        spec, theta = instance(4)
        seen = []
        checks = verify(spec, theta, progress=seen.append)
        self.assertEqual(seen, checks)

    def test_oracle_cap(self):
        spec, theta = instance(4, n=40)
        with self.assertRaises(OracleCapExceeded) as cm:
            verify(spec, theta, dense_cap=30)
        self.assertEqual(cm.exception.status_code, 413)
        self.assertEqual(cm.exception.exit_code, 1)


class BoundaryVerifyTests(TestCase):
    """
    Finite differences at a θ on the edge of the admissible region stay inside it.
    """

    def setUp(self):
        logging.disable(logging.WARNING)
        self.addCleanup(logging.disable, logging.NOTSET)

    def assert_finite_differences_pass(self, checks):
        by_name = {c.name: c for c in checks}
        for name in FINITE_DIFFERENCE_CHECKS:
            with self.subTest(check=name):
                self.assertTrue(by_name[name].passed, by_name[name])

    def test_variance_ratio_at_lower_bound(self):
        spec = equal_mean_squares_spec()
        lower = effective_bounds(spec)[1][0]
        theta = ThetaVector.from_array(spec, [4.0 / 3.0, lower])
        checks = verify(spec, theta)
        self.assert_finite_differences_pass(checks)
        self.assertEqual([c.name for c in checks if not c.passed], [])

    def test_correlation_at_upper_bound(self):
        spec, theta = instance(1, 'ar1', n=15)
        upper = effective_bounds(spec)[1][1]
        self.assertEqual(upper, 0.99)
        self.assert_finite_differences_pass(verify(spec, ThetaVector.from_array(spec, [theta.sigma2, upper])))

    def test_correlation_at_lower_bound(self):
        spec, theta = instance(1, 'ar1+iid', n=15)
        lower = effective_bounds(spec)[2][0]
        values = theta.as_array()
        values[2] = lower
        self.assert_finite_differences_pass(verify(spec, ThetaVector.from_array(spec, values)))


class SplittingCheckTests(TestCase):

    def setUp(self):
        logging.disable(logging.WARNING)
        self.addCleanup(logging.disable, logging.NOTSET)

    def test_detects_a_wrong_second_derivative(self):
        spec, theta = instance(3, 'ar1+iid', n=15)

        def no_curvature(spec, theta, i, j):
            return np.zeros((spec.n, spec.n))

        with mock.patch('reml.verify.variance_second_derivative', no_curvature):
            failed = [c.name for c in verify(spec, theta) if not c.passed]
        self.assertIn('information_splitting', failed)
        self.assertIn('splitting_via_contrast', failed)
        self.assertNotIn('score_vs_finite_difference', failed)
