import warnings

import numpy as np
from django.core.cache import cache
from django.test import SimpleTestCase
from scipy.integrate import IntegrationWarning

from uzawa_fem.analysis import (
    ConstantsCache,
    FineTestSpace,
    OracleResidualSolver,
    aposteriori_indicator,
    best_approximation,
    constants_from_matrices,
    constants_from_values,
    error_report,
    l2_error,
    operator_constants,
    oracle_gap,
    oracle_residual,
    residual_expression_error,
)
from uzawa_fem.assembly import assemble_b_vector, assemble_rhs, mass_matrix_U, v_inner_product
from uzawa_fem.exceptions import InvalidArgumentError
from uzawa_fem.minres_inner import solve_coeffs_given_breaks
from uzawa_fem.model import ExactSolution, ReluResidual, TrialFunction, exact_solution

from .helpers import UNIT, consistent_data, dirac_data, unit_mesh


class ConstantsTests(SimpleTestCase):
    def test_identity_operator(self):
        constants = constants_from_values(1.0, 1.0)
        self.assertEqual((constants.omega, constants.delta_star, constants.rho), (0.0, 0.5, 1.0))

    def test_contraction_factor(self):
        constants = constants_from_values(0.5, 1.0, rho=1.0)
        self.assertAlmostEqual(constants.omega, 0.75)
        self.assertAlmostEqual(constants.delta_star, 0.125)
        self.assertEqual(constants.quasi_optimality, 2.0)

    def test_large_rho_is_not_contractive(self):
        with self.assertLogs('uzawa_fem.analysis', level='WARNING'):
            constants = constants_from_values(0.5, 1.0, rho=2.5)
        self.assertFalse(constants.contractive)
        self.assertEqual(constants.delta_star, 0.0)

    def test_rank_deficient_coupling(self):
        coupling = np.array([[1.0, 0.0], [0.0, 0.0]])
        with self.assertLogs('uzawa_fem.analysis', level='WARNING'):
            constants = constants_from_matrices(coupling, np.eye(2), np.eye(2))
        self.assertEqual((constants.mu, constants.cb, constants.omega), (0.0, 1.0, 1.0))

    def test_invalid_rho(self):
        with self.assertRaises(InvalidArgumentError):
            constants_from_values(0.5, 1.0, rho=-1.0)


class IndicatorTests(SimpleTestCase):
    def test_values(self):
        self.assertEqual(aposteriori_indicator(0.0, 0.0, 1.0), 0.0)
        self.assertEqual(aposteriori_indicator(0.5, 0.5, 1.0), 1.0)
        self.assertEqual(aposteriori_indicator(0.5, 0.0, 0.25), 2.0)

    def test_zero_mu(self):
        with self.assertRaises(InvalidArgumentError):
            aposteriori_indicator(1.0, 0.0, 0.0)


class FineSpaceTests(SimpleTestCase):
    def setUp(self):
        cache.clear()

    def test_dimensions(self):
        fine = FineTestSpace(unit_mesh(2), 1, dirac_data(), refinement=8)
        self.assertEqual(fine.dim, 16)
        self.assertEqual(fine.coupling.shape, (16, 4))
        np.testing.assert_array_equal(fine.gram, fine.gram.T)

    def test_invalid_refinement(self):
        with self.assertRaises(InvalidArgumentError):
            FineTestSpace(unit_mesh(2), 1, dirac_data(), refinement=0)

    def test_oracle_vanishes_on_exact_solution(self):
        data = consistent_data()
        fine = FineTestSpace(unit_mesh(3), 1, data, refinement=8)
        r = oracle_residual(TrialFunction.constant(unit_mesh(3), 1, 1.0), data, fine)
        np.testing.assert_allclose(r.coeffs, 0.0, atol=1e-12)

    def test_riesz_identity(self):
        data = dirac_data(0.3, beta=1.0, gamma=0.5)
        mesh = unit_mesh(4)
        fine = FineTestSpace(mesh, 1, data, refinement=4)
        u_h = TrialFunction(mesh, 1, np.random.default_rng(1).normal(size=8))
        r = oracle_residual(u_h, data, fine)
        v = ReluResidual(UNIT, [0.75], [1.0])
        expected = assemble_rhs(v, data) - u_h.coeffs @ assemble_b_vector((mesh, 1), v, data)
        self.assertAlmostEqual(v_inner_product(r.to_relu(), v, data.beta), expected, delta=1e-10)

    def test_relu_form_matches_nodal_values(self):
        data = dirac_data(0.3)
        fine = FineTestSpace(unit_mesh(2), 0, data, refinement=8)
        r = oracle_residual(TrialFunction(unit_mesh(2), 0, [0.2, -0.4]), data, fine)
        np.testing.assert_allclose(r.to_relu().values(fine.nodes), r.nodal_values, atol=1e-12)
        self.assertLess(oracle_gap(r.to_relu(), r, data.beta), 1e-10)

    def test_perturbation_size(self):
        fine = FineTestSpace(unit_mesh(2), 0, dirac_data(), refinement=8)
        r = oracle_residual(TrialFunction.zeros(unit_mesh(2), 0), dirac_data(), fine)
        noisy = r.perturbed(0.1, np.random.default_rng(0))
        difference = noisy.coeffs - r.coeffs
        self.assertAlmostEqual(np.sqrt(difference @ fine.gram @ difference), 0.1 * r.vnorm, places=12)

    def test_oracle_solver(self):
        data = dirac_data()
        fine = FineTestSpace(unit_mesh(2), 0, data, refinement=8)
        result = OracleResidualSolver(fine)(TrialFunction.zeros(unit_mesh(2), 0), data)
        self.assertAlmostEqual(result.J, -0.5 * result.dual_norm ** 2, places=14)
        self.assertEqual(result.evals, 0)
        with self.assertRaises(InvalidArgumentError):
            OracleResidualSolver(fine, delta=-0.1)

    def test_dual_norm_dominates_network_residual(self):
        data = dirac_data()
        mesh = unit_mesh(2)
        fine = FineTestSpace(mesh, 1, data, refinement=8)
        u_h = TrialFunction(mesh, 1, [0.1, 0.3, 0.8, 1.1])
        _, J = solve_coeffs_given_breaks([0.25, 0.5, 1.0], u_h, data)
        self.assertLessEqual(np.sqrt(-2.0 * J), oracle_residual(u_h, data, fine).vnorm + 1e-12)

    def test_oracle_norm_is_mesh_independent(self):
        data = dirac_data()
        mesh = unit_mesh(2)
        u_h = TrialFunction.zeros(mesh, 1)
        coarse = oracle_residual(u_h, data, FineTestSpace(mesh, 1, data, refinement=16)).vnorm
        fine = oracle_residual(u_h, data, FineTestSpace(mesh, 1, data, refinement=32)).vnorm
        self.assertAlmostEqual(coarse / fine, 1.0, delta=0.01)


class OperatorConstantsTests(SimpleTestCase):
    def setUp(self):
        cache.clear()

    def test_stable_under_refinement(self):
        mesh = unit_mesh(2)
        coarse = operator_constants(mesh, 1, FineTestSpace(mesh, 1, dirac_data(), refinement=16))
        fine = operator_constants(mesh, 1, FineTestSpace(mesh, 1, dirac_data(), refinement=32))
        self.assertAlmostEqual(coarse.mu / fine.mu, 1.0, delta=0.05)
        self.assertAlmostEqual(coarse.cb / fine.cb, 1.0, delta=0.05)
        self.assertTrue(fine.contractive)

    def test_cached_after_first_call(self):
        mesh = unit_mesh(2)
        fine = FineTestSpace(mesh, 0, dirac_data(), refinement=8)
        self.assertIsNone(ConstantsCache.get(fine))
        first = operator_constants(mesh, 0, fine)
        self.assertEqual(ConstantsCache.get(fine), (first.mu, first.cb))
        other = FineTestSpace(mesh, 0, dirac_data(beta=2.0), refinement=8)
        self.assertNotEqual(ConstantsCache.key(fine), ConstantsCache.key(other))

    def test_coarse_refinement_is_logged(self):
        mesh = unit_mesh(2)
        with self.assertLogs('uzawa_fem.analysis', level='WARNING'):
            operator_constants(mesh, 0, FineTestSpace(mesh, 0, dirac_data(), refinement=4))

    def test_matches_direct_matrix_constants(self):
        mesh = unit_mesh(2)
        fine = FineTestSpace(mesh, 1, dirac_data(), refinement=8)
        direct = constants_from_matrices(fine.coupling, mass_matrix_U(mesh, 1), fine.gram)
        measured = operator_constants(mesh, 1, fine)
        self.assertEqual((measured.mu, measured.cb, measured.omega), (direct.mu, direct.cb, direct.omega))


class ErrorMeasureTests(SimpleTestCase):
    def test_l2_error_of_exact_trial_function(self):
        exact = exact_solution(consistent_data())
        self.assertLess(l2_error(TrialFunction.constant(unit_mesh(3), 1, 1.0), exact), 1e-12)

    def test_l2_error_of_step(self):
        exact = exact_solution(dirac_data())
        self.assertAlmostEqual(l2_error(TrialFunction.zeros(unit_mesh(2), 0), exact), np.sqrt(0.5), places=10)

    def test_residual_expression_without_residual(self):
        error = residual_expression_error(ReluResidual.zero(UNIT), consistent_data(), 0.01)
        self.assertAlmostEqual(error, 1.0, places=12)

    def test_residual_expression_excludes_dirac_window(self):
        r = ReluResidual(UNIT, [0.5], [1.0])
        self.assertAlmostEqual(residual_expression_error(r, dirac_data(), 0.01), np.sqrt(0.495), places=12)

    def test_best_approximation_of_step(self):
        best = best_approximation(exact_solution(dirac_data()), unit_mesh(1), 0)
        np.testing.assert_allclose(best.coeffs, [0.5], rtol=1e-10)

    def test_best_approximation_reproduces_linear(self):
        best = best_approximation(ExactSolution(lambda x: 2.0 * x + 1.0), unit_mesh(3), 1)
        x = np.linspace(0.05, 0.95, 7)
        np.testing.assert_allclose(best(x), 2.0 * x + 1.0, atol=1e-12)

    def test_error_report(self):
        data = dirac_data()
        r = ReluResidual(UNIT, [0.5, 1.0], [1.0, 0.5])
        report = error_report(TrialFunction.zeros(unit_mesh(2), 1), r, data, exact_solution(data))
        self.assertEqual((report.dofs_u, report.dofs_r), (4, 2))
        self.assertAlmostEqual(report.l2_error_u, np.sqrt(0.5), places=10)
        self.assertAlmostEqual(report.dual_norm, np.sqrt(v_inner_product(r, r, 1.0)), places=14)

    def test_indicator_bounds_error(self):
        cache.clear()
        data = dirac_data()
        mesh = unit_mesh(3)
        fine = FineTestSpace(mesh, 0, data, refinement=64)
        u_h = TrialFunction(mesh, 0, [0.0, 0.5, 1.0])
        r = oracle_residual(u_h, data, fine)
        r_n = r.to_relu()
        mu = operator_constants(mesh, 0, fine).mu
        indicator = aposteriori_indicator(r.vnorm, oracle_gap(r_n, r, data.beta), mu)
        error = l2_error(u_h, exact_solution(data))
        self.assertAlmostEqual(error, np.sqrt(1.0 / 12.0), places=10)
        self.assertGreaterEqual(indicator, error)

    def test_jump_wins_over_nearby_knot(self):
        data = dirac_data(location=2.0 / 3.0)
        exact = exact_solution(data)
        knot = 2.0 / 3.0 - 0.5 * UNIT.dedup_tolerance
        with warnings.catch_warnings():
            warnings.simplefilter('error', IntegrationWarning)
            error = l2_error(TrialFunction.zeros(unit_mesh(1), 0), exact, [knot])
        self.assertAlmostEqual(error, np.sqrt(1.0 / 3.0), places=12)
