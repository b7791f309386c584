from unittest import TestCase

import numpy as np
import scipy.sparse as sp

from reml.abstractstructure import BOUNDARY_EPS
from reml.ar1structure import AR1Residual
from reml.exceptions import (DimensionMismatch, InadmissibleParameter, IndexOutOfRange, NotPositiveDefinite,
                             RankDeficient)
from reml.explicitstructure import ExplicitStructure
from reml.finitediff import central_difference, finite_difference_gradient, relative_error, second_difference
from reml.iidstructure import IidBlocksStructure
from reml.model import (ModelSpec, Parameterization, ThetaVector, check_admissible, derivative_matvec,
                        h_value, standard_blocks, variance_first_derivative, variance_second_derivative,
                        variance_value)
from tests.helpers import instance


def ar1_spec(n: int = 3) -> ModelSpec:
    return ModelSpec.build(np.arange(n, dtype=float), np.ones(n), r_structure=AR1Residual(n))


class ModelSpecTests(TestCase):

    def test_names_and_counts(self):
        spec, _ = instance(1, 'ar1+iid')
        self.assertEqual(spec.param_names, ['sigma2', 'gamma[g]', 'phi'])
        self.assertEqual((spec.n_gamma, spec.n_phi, spec.n_params), (1, 1, 3))
        self.assertFalse(spec.is_linear)

    def test_linearity(self):
        ratio, _ = instance(1, 'iid')
        component, _ = instance(1, 'iid', parameterization=Parameterization.component)
        plain, _ = instance(1, 'none')
        self.assertFalse(ratio.is_linear)
        self.assertTrue(component.is_linear)
        self.assertTrue(plain.is_linear)

    def test_rank_deficient_design(self):
        X = np.column_stack([np.ones(4), np.ones(4)])
        with self.assertRaises(RankDeficient) as cm:
            ModelSpec.build(np.arange(4.0), X, fixed_names=['a', 'b'])
        self.assertEqual(cm.exception.columns, ['b'])

    def test_badly_scaled_design_is_full_rank(self):
        t = np.linspace(0.0, 1.0, 20)
        X = np.column_stack([np.ones(20), 1e7 * (1.0 + t)])
        spec = ModelSpec.build(np.arange(20.0), X, fixed_names=['a', 'b'])
        self.assertEqual(spec.X.shape, (20, 2))

    def test_badly_scaled_duplicate_is_rank_deficient(self):
        X = np.column_stack([np.ones(20), np.full(20, 1e7)])
        with self.assertRaises(RankDeficient) as cm:
            ModelSpec.build(np.arange(20.0), X, fixed_names=['a', 'b'])
        self.assertEqual(cm.exception.columns, ['b'])

    def test_too_few_observations(self):
        with self.assertRaises(DimensionMismatch):
            ModelSpec.build(np.arange(2.0), np.eye(2))

    def test_response_length(self):
        with self.assertRaises(DimensionMismatch):
            ModelSpec(y=np.zeros(3), X=np.ones((4, 1)), Z=sp.csc_matrix((4, 0)),
                      g_structure=IidBlocksStructure([1]), r_structure=AR1Residual(4))

    def test_with_response(self):
        spec, _ = instance(2)
        other = spec.with_response(np.zeros(spec.n))
        np.testing.assert_array_equal(other.y, np.zeros(spec.n))
        self.assertIs(other.X, spec.X)


class ThetaVectorTests(TestCase):

    def test_split(self):
        spec, _ = instance(1, 'ar1+iid')
        theta = ThetaVector.of(spec, 2.0, [0.5], [0.3])
        self.assertEqual(theta.sigma2, 2.0)
        np.testing.assert_array_equal(theta.gamma, [0.5])
        np.testing.assert_array_equal(theta.phi, [0.3])
        np.testing.assert_array_equal(theta.as_array(), [2.0, 0.5, 0.3])
        self.assertEqual(len(theta), 3)

    def test_wrong_length(self):
        spec, _ = instance(1, 'iid')
        with self.assertRaises(InadmissibleParameter):
            ThetaVector.from_array(spec, [1.0])

    def test_admissibility(self):
        spec, _ = instance(1, 'ar1+iid')
        for values in ([0.0, 0.5, 0.1], [1.0, -0.1, 0.1], [1.0, 0.5, 0.995], [np.nan, 0.5, 0.1]):
            with self.subTest(values=values), self.assertRaises(InadmissibleParameter):
                check_admissible(spec, ThetaVector.from_array(spec, values))


class VarianceTests(TestCase):

    def test_no_random_effects(self):
        spec = ModelSpec.build(np.arange(4.0), np.ones(4))
        np.testing.assert_array_equal(variance_value(spec, ThetaVector.of(spec, 2.0)), 2 * np.eye(4))

    def test_one_random_block(self):
        spec, _ = instance(3, 'iid', parameterization=Parameterization.component)
        theta = ThetaVector.of(spec, 1.5, [0.7])
        V = variance_value(spec, theta)
        Z = spec.Z_dense
        np.testing.assert_allclose(V, 1.5 * np.eye(spec.n) + 0.7 * Z @ Z.T)
        np.testing.assert_array_equal(V, V.T)
        self.assertGreater(np.min(np.linalg.eigvalsh(V)), 0)

    def test_parameterizations_agree(self):
        ratio, _ = instance(4, 'iid')
        component = ModelSpec.build(ratio.y, ratio.X, ratio.Z, ratio.g_structure,
                                    parameterization=Parameterization.component)
        V_ratio = variance_value(ratio, ThetaVector.of(ratio, 2.0, [0.25]))
        V_component = variance_value(component, ThetaVector.of(component, 2.0, [0.5]))
        np.testing.assert_allclose(V_ratio, V_component)

    def test_ar1_at_zero_is_identity(self):
        spec = ar1_spec(5)
        np.testing.assert_array_equal(variance_value(spec, ThetaVector.of(spec, 1.0, phi=[0.0])), np.eye(5))

    def test_inadmissible(self):
        spec = ar1_spec()
        with self.assertRaises(InadmissibleParameter):
            variance_value(spec, ThetaVector.of(spec, -1.0, phi=[0.0]))


class DerivativeTests(TestCase):

    def test_sigma2_derivative_is_h(self):
        spec, theta = instance(5, 'ar1+iid')
        np.testing.assert_allclose(variance_first_derivative(spec, theta, 0), h_value(spec, theta))

    def test_linear_structure(self):
        n = 6
        Z1 = np.kron(np.eye(2), np.ones((3, 1)))
        Z2 = np.kron(np.ones((2, 1)), np.eye(3))
        Z = np.hstack([Z1, Z2])
        g = IidBlocksStructure([2, 3], names=['a', 'b'])
        spec = ModelSpec.build(np.arange(n, dtype=float), np.ones(n), Z, g,
                               parameterization=Parameterization.component)
        theta = ThetaVector.of(spec, 1.0, [0.4, 0.9])
        np.testing.assert_allclose(variance_first_derivative(spec, theta, 1), Z1 @ Z1.T)
        np.testing.assert_allclose(variance_first_derivative(spec, theta, 2), Z2 @ Z2.T)
        for i in range(3):
            for j in range(3):
                self.assertFalse(np.any(variance_second_derivative(spec, theta, i, j)))

    def test_ar1_first_derivative(self):
        spec = ar1_spec(3)
        theta = ThetaVector.of(spec, 1.0, phi=[0.5])

        def V(x):
            return variance_value(spec, ThetaVector.from_array(spec, x))

        fd = central_difference(V, theta.as_array(), 1, 1e-6)
        self.assertLessEqual(relative_error(variance_first_derivative(spec, theta, 1), fd), 1e-7)

    def test_first_derivatives_match_finite_differences(self):
        for seed in range(10):
            for structure in ('iid', 'ar1+iid'):
                spec, theta = instance(seed, structure)
                values = theta.as_array()

                def V(x):
                    return variance_value(spec, ThetaVector.from_array(spec, x))

                for i in range(spec.n_params):
                    with self.subTest(seed=seed, structure=structure, i=i):
                        fd = central_difference(V, values, i, 1e-6)
                        self.assertLessEqual(relative_error(variance_first_derivative(spec, theta, i), fd), 1e-6)

    def test_ar1_second_derivative(self):
        spec = ar1_spec(4)
        theta = ThetaVector.of(spec, 1.3, phi=[0.4])

        def V(x):
            return variance_value(spec, ThetaVector.from_array(spec, x))

        fd = second_difference(V, theta.as_array(), 1, 1, 1e-4)
        self.assertLessEqual(relative_error(variance_second_derivative(spec, theta, 1, 1), fd), 1e-5)

    def test_second_derivative_symmetric_in_indices(self):
        spec, theta = instance(6, 'ar1+iid')
        for i in range(3):
            for j in range(3):
                np.testing.assert_array_equal(variance_second_derivative(spec, theta, i, j),
                                              variance_second_derivative(spec, theta, j, i))

    def test_cross_term_is_h_derivative(self):
        spec, theta = instance(7, 'iid')
        Z = spec.Z_dense
        np.testing.assert_allclose(variance_second_derivative(spec, theta, 0, 1), Z @ Z.T)

    def test_matvec(self):
        spec, theta = instance(8, 'ar1+iid')
        v = np.random.default_rng(0).standard_normal((spec.n, 2))
        for i in range(spec.n_params):
            np.testing.assert_allclose(derivative_matvec(spec, theta, i, v),
                                       variance_first_derivative(spec, theta, i) @ v, atol=1e-12)

    def test_index_out_of_range(self):
        spec, theta = instance(1, 'iid')
        with self.assertRaises(IndexOutOfRange):
            variance_first_derivative(spec, theta, 2)
        with self.assertRaises(IndexOutOfRange):
            variance_second_derivative(spec, theta, 0, -1)


class StandardBlocksTests(TestCase):

    def test_identity_blocks(self):
        n, b = 6, 3
        Z = np.kron(np.eye(b), np.ones((2, 1)))
        spec = ModelSpec.build(np.arange(n, dtype=float), np.ones(n), Z, IidBlocksStructure([b]))
        blocks = standard_blocks(spec, ThetaVector.of(spec, 1.0, [1.0]))
        np.testing.assert_allclose(blocks.H, np.eye(n) + Z @ Z.T)
        np.testing.assert_allclose(blocks.H_inv, np.linalg.inv(blocks.H), atol=1e-10)

    def test_no_random_effects(self):
        spec = ar1_spec(4)
        blocks = standard_blocks(spec, ThetaVector.of(spec, 1.0, phi=[0.3]))
        np.testing.assert_array_equal(blocks.H, blocks.R)

    def test_scalar_woodbury(self):
        n = 4
        gamma = np.array([0.5, 1.0, 2.0, 4.0])
        g = IidBlocksStructure([1] * n, names=[f'g{i}' for i in range(n)])
        spec = ModelSpec.build(np.arange(n, dtype=float), np.ones(n), np.eye(n), g)
        blocks = standard_blocks(spec, ThetaVector.of(spec, 1.0, gamma))
        np.testing.assert_allclose(blocks.H_inv, np.diag(1 / (1 + gamma)), atol=1e-12)

    def test_random_instances(self):
        for seed in range(5):
            spec, theta = instance(seed, 'ar1+iid')
            blocks = standard_blocks(spec, theta)
            self.assertLessEqual(np.max(np.abs(blocks.H_inv - np.linalg.inv(blocks.H))), 1e-10)


class StructureTests(TestCase):

    def test_ar1_inverse(self):
        r = AR1Residual(5)
        np.testing.assert_allclose(r.inverse([0.6]).toarray(), np.linalg.inv(r.value([0.6])), atol=1e-12)
        self.assertAlmostEqual(r.logdet([0.6]), np.linalg.slogdet(r.value([0.6]))[1])

    def test_ar1_bounds(self):
        with self.assertRaises(ValueError):
            AR1Residual(3, lower=-1.0)

    def test_iid_singular(self):
        g = IidBlocksStructure([2])
        with self.assertRaises(NotPositiveDefinite):
            g.inverse([0.0])

    def test_explicit_structure(self):
        M1 = np.diag([1.0, 0.0, 1.0])
        M2 = np.array([[0.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]])
        s = ExplicitStructure([M1, M2], base=np.eye(3), names=['a', 'b'])
        np.testing.assert_allclose(s.value([2.0, 0.5]), np.eye(3) + 2 * M1 + 0.5 * M2)
        np.testing.assert_array_equal(s.first_derivative([2.0, 0.5], 1), M2)
        self.assertTrue(s.is_linear)
        np.testing.assert_allclose(s.inverse([2.0, 0.5]).toarray(), np.linalg.inv(s.value([2.0, 0.5])),
                                   atol=1e-12)

    def test_explicit_rejects_asymmetric(self):
        with self.assertRaises(ValueError):
            ExplicitStructure([np.array([[1.0, 2.0], [0.0, 1.0]])])

    def test_explicit_default_bounds_keep_g_invertible(self):
        s = ExplicitStructure([np.eye(3)], names=['gamma[g]'])
        self.assertEqual(s.bounds[0].lower, BOUNDARY_EPS)
        with self.assertRaises(InadmissibleParameter):
            s.check(np.array([0.0]))
        s.check(np.array([BOUNDARY_EPS]))
        self.assertAlmostEqual(s.logdet([BOUNDARY_EPS]), 3 * np.log(BOUNDARY_EPS))


class BoundedDifferenceTests(TestCase):

    @staticmethod
    def inside(bounds):
        def f(x):
            for v, (lo, hi) in zip(x, bounds):
                if not lo <= v <= hi:
                    raise InadmissibleParameter(f'{v} outside [{lo}, {hi}]')
            return x[0] ** 2 + 3 * x[1]
        return f

    def test_one_sided_at_bounds(self):
        bounds = [(1.0, 2.0), (-np.inf, np.inf)]
        f = self.inside(bounds)
        for x0, expected in (([1.0, 0.0], [2.0, 3.0]), ([2.0, 0.0], [4.0, 3.0]), ([1.5, 0.0], [3.0, 3.0])):
            with self.subTest(x0=x0):
                np.testing.assert_allclose(finite_difference_gradient(f, x0, 1e-3, bounds), expected, rtol=1e-8)

    def test_narrow_interval(self):
        bounds = [(1.0, 1.0 + 1e-7), (-1.0, 1.0)]
        np.testing.assert_allclose(finite_difference_gradient(self.inside(bounds), [1.0, 0.0], 1e-3, bounds),
                                   [2.0, 3.0], rtol=1e-6)

    def test_without_bounds_is_centred(self):
        calls = []

        def f(x):
            calls.append(x[0])
            return x[0] ** 2

        self.assertAlmostEqual(float(central_difference(f, [0.0], 0, 1e-3)), 0.0)
        self.assertEqual(sorted(calls), [-1e-3, 1e-3])
