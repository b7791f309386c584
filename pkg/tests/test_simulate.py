import json
import os
import shutil
import tempfile
from unittest import TestCase

import numpy as np
import pandas as pd

from reml.exceptions import InputError
from reml.ingest import ingest
from reml.model import Parameterization, ThetaVector, variance_value
from reml.simulate import (SimulationPlan, balanced_oneway_fixture, draw_response, draw_responses,
                           monte_carlo_mean, oneway_anova_targets, oneway_spec, random_instance,
                           simulate_dataset, write_dataset)
from tests.helpers import equal_mean_squares_response, instance


class DrawTests(TestCase):

    def setUp(self):
        spec, theta = instance(5, 'ar1+iid', n=10, groups=3)
        self.plan = SimulationPlan(spec=spec, theta=theta, tau=np.array([1.0, -2.0]), replicates=4000, seed=9)

    def test_replicates_are_reproducible(self):
        np.testing.assert_array_equal(draw_response(self.plan, 7), draw_response(self.plan, 7))
        self.assertFalse(np.allclose(draw_response(self.plan, 7), draw_response(self.plan, 8)))

    def test_workers_do_not_change_draws(self):
        np.testing.assert_array_equal(draw_responses(self.plan), draw_responses(self.plan, workers=4))

    def test_moments(self):
        Y = draw_responses(self.plan)
        V = variance_value(self.plan.spec, self.plan.theta)
        mean = self.plan.spec.X @ self.plan.tau
        se = np.sqrt(np.diag(V) / self.plan.replicates)
        self.assertTrue(np.all(np.abs(Y.mean(axis=1) - mean) <= 4 * se))
        np.testing.assert_allclose(np.cov(Y), V, atol=0.15 * np.max(np.abs(V)))

    def test_monte_carlo_mean(self):
        plan = SimulationPlan(spec=self.plan.spec, theta=self.plan.theta, replicates=200, seed=1)
        mean, se = monte_carlo_mean(plan, lambda y: np.array([y[0], y[0] ** 2]))
        self.assertEqual(mean.shape, (2,))
        self.assertTrue(np.all(se > 0))
        self.assertLessEqual(abs(mean[0]), 4 * se[0])

    def test_invalid_plan(self):
        spec, theta = self.plan.spec, self.plan.theta
        with self.assertRaises(InputError):
            SimulationPlan(spec=spec, theta=theta, replicates=0)
        with self.assertRaises(InputError):
            SimulationPlan(spec=spec, theta=theta, tau=np.zeros(3))


class AnovaTests(TestCase):

    def test_equal_mean_squares(self):
        targets = oneway_anova_targets(equal_mean_squares_response(), 5, 4)
        self.assertAlmostEqual(targets.msa, 4 / 3, places=12)
        self.assertAlmostEqual(targets.mse, 4 / 3, places=12)
        self.assertEqual(targets.sigma_u2, 0.0)
        self.assertFalse(targets.interior)

    def test_targets(self):
        y = np.array([1.0, 3.0, 6.0, 8.0])
        targets = oneway_anova_targets(y, 2, 2)
        # group means 2 and 7, grand mean 4.5
        self.assertAlmostEqual(targets.msa, 25.0)
        self.assertAlmostEqual(targets.mse, 2.0)
        self.assertAlmostEqual(targets.sigma_u2, 11.5)
        np.testing.assert_allclose(targets.theta(), [2.0, 5.75])
        np.testing.assert_allclose(targets.theta(Parameterization.component), [2.0, 11.5])

    def test_single_observation_groups(self):
        with self.assertRaises(InputError):
            oneway_anova_targets(np.zeros(4), 4, 1)
        with self.assertRaises(InputError):
            oneway_spec(np.zeros(4), 1, 4)

    def test_fixture(self):
        fixture = balanced_oneway_fixture(8, 6, 0.5, 1.0, seed=3, parameterization=Parameterization.component)
        self.assertEqual(fixture.spec.n, 48)
        self.assertEqual(fixture.spec.b, 8)
        np.testing.assert_allclose(fixture.theta_true.as_array(), [1.0, 0.5])
        self.assertEqual(fixture.targets.k, 6)
        again = balanced_oneway_fixture(8, 6, 0.5, 1.0, seed=3, parameterization=Parameterization.component)
        np.testing.assert_array_equal(fixture.spec.y, again.spec.y)


class RandomInstanceTests(TestCase):

    def test_structures(self):
        expected = {'iid': ['sigma2', 'gamma[g]'], 'ar1': ['sigma2', 'phi'],
                    'ar1+iid': ['sigma2', 'gamma[g]', 'phi'], 'none': ['sigma2']}
        for structure, names in expected.items():
            with self.subTest(structure=structure):
                spec, theta = random_instance(np.random.default_rng(0), 16, 3, structure)
                self.assertEqual(spec.param_names, names)
                self.assertEqual(spec.p, 3)
                self.assertIsInstance(theta, ThetaVector)

    def test_unknown_structure(self):
        with self.assertRaises(InputError):
            random_instance(np.random.default_rng(0), 16, 3, 'spline')


class DatasetTests(TestCase):

    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.directory)

    def test_write_and_read_back(self):
        dataset = simulate_dataset(4, 3, 0.5, 1.0, seed=2, phi=0.3, mean=1.5)
        write_dataset(self.directory, dataset)
        self.assertEqual(sorted(os.listdir(self.directory)), ['data.csv', 'model.cfg', 'truth.json'])
        frame = pd.read_csv(os.path.join(self.directory, 'data.csv'))
        self.assertEqual(list(frame.columns), ['y', 'group', 't'])
        np.testing.assert_array_equal(frame['y'].to_numpy(), dataset.frame['y'].to_numpy())
        with open(os.path.join(self.directory, 'truth.json')) as f:
            truth = json.load(f)
        self.assertEqual(truth['parameter_names'], ['sigma2', 'gamma[group]', 'phi'])
        np.testing.assert_allclose(truth['theta'], [1.0, 0.5, 0.3])
        self.assertEqual(truth['seed'], 2)

        spec = ingest(os.path.join(self.directory, 'data.csv'), os.path.join(self.directory, 'model.cfg'))
        self.assertEqual(spec.param_names, ['sigma2', 'gamma[group]', 'phi'])
        self.assertEqual((spec.n, spec.p, spec.b), (12, 1, 4))

    def test_seed_determines_data(self):
        a = simulate_dataset(4, 3, 0.5, 1.0, seed=2)
        b = simulate_dataset(4, 3, 0.5, 1.0, seed=2)
        c = simulate_dataset(4, 3, 0.5, 1.0, seed=3)
        pd.testing.assert_frame_equal(a.frame, b.frame)
        self.assertFalse(np.allclose(a.frame['y'], c.frame['y']))
        self.assertIn('residual = identity', a.model_config)
