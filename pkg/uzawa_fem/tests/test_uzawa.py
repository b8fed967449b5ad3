import numpy as np
from django.core.cache import cache
from django.test import SimpleTestCase

from uzawa_fem.analysis import FineTestSpace, OracleResidualSolver, operator_constants
from uzawa_fem.assembly import mass_matrix_U
from uzawa_fem.exceptions import DegenerateResidualError, InvalidArgumentError
from uzawa_fem.minres_inner import InnerConfig
from uzawa_fem.model import ReluResidual, TrialFunction
from uzawa_fem.optimizer import SimplexOptions
from uzawa_fem.uzawa import (
    UzawaConfig,
    check_convergence,
    error_map_spectral_radius,
    initial_guess,
    primal_update,
    run_uzawa,
)

from .helpers import UNIT, consistent_data, dirac_data, unit_mesh


def mass_norm(u, value):
    mass = mass_matrix_U(u.mesh, u.degree)
    e = u.coeffs - value
    return float(np.sqrt(e @ mass @ e))


class PrimalUpdateTests(SimpleTestCase):
    def test_zero_rho_keeps_u(self):
        u = TrialFunction.constant(unit_mesh(2), 1, 3.0)
        self.assertIs(primal_update(u, ReluResidual(UNIT, [0.5], [1.0]), 0.0, dirac_data()), u)

    def test_zero_residual_keeps_u(self):
        u = TrialFunction(unit_mesh(2), 1, [1.0, 2.0, 3.0, 4.0])
        new = primal_update(u, ReluResidual.zero(UNIT), 0.7, dirac_data())
        np.testing.assert_allclose(new.coeffs, u.coeffs, rtol=1e-14)

    def test_single_element_step(self):
        # b(1, ReLU(0.5 - x)) = 0.5 with beta = 1, gamma = 0
        u = TrialFunction.zeros(unit_mesh(1), 0)
        new = primal_update(u, ReluResidual(UNIT, [0.5], [1.0]), 1.0, dirac_data())
        np.testing.assert_allclose(new.coeffs, [0.5], rtol=1e-14)


class ConvergenceCheckTests(SimpleTestCase):
    def test_identical_iterates(self):
        u = TrialFunction.constant(unit_mesh(2), 0, 1.0)
        self.assertEqual(check_convergence(u, u, UzawaConfig(rho=1.0)), (0.0, True))

    def test_mass_norm_step(self):
        mesh = unit_mesh(2)
        step, stop = check_convergence(
            TrialFunction.zeros(mesh, 0), TrialFunction(mesh, 0, [1.0, 0.0]), UzawaConfig(rho=1.0)
        )
        self.assertAlmostEqual(step, np.sqrt(0.5), places=14)
        self.assertFalse(stop)

    def test_euclidean_step(self):
        mesh = unit_mesh(2)
        cfg = UzawaConfig(rho=1.0, step_norm='euclidean')
        step, _ = check_convergence(TrialFunction.zeros(mesh, 0), TrialFunction(mesh, 0, [3.0, 4.0]), cfg)
        self.assertEqual(step, 5.0)


class UzawaConfigTests(SimpleTestCase):
    def test_defaults_from_settings(self):
        cfg = UzawaConfig()
        self.assertEqual((cfg.eps, cfg.max_iters, cfg.kappa), (1e-8, 50, 0.5))

    def test_inner_tolerance_schedule(self):
        cfg = UzawaConfig(tol_start=1e-2, kappa=0.1, tol_floor=1e-5)
        self.assertEqual([cfg.inner_tolerance(k) for k in (0, 2, 5)], [1e-2, max(1e-2 * 0.1 ** 2, 1e-5), 1e-5])

    def test_invalid_values(self):
        for kwargs in ({'rho': 0.0}, {'eps': -1.0}, {'max_iters': -1}, {'kappa': 1.5}, {'step_norm': 'h1'}, {'initial': 'random'}):
            with self.assertRaises(InvalidArgumentError):
                UzawaConfig(**kwargs)

    def test_inflow_initial_guess(self):
        u = initial_guess(consistent_data(), unit_mesh(3), 1, UzawaConfig(initial='inflow'))
        np.testing.assert_array_equal(u.coeffs, np.ones(6))


class OracleUzawaTests(SimpleTestCase):
    """Outer iteration driven by the exact fine-space residual; u = 1 is the fixed point"""

    def setUp(self):
        cache.clear()
        self.data = consistent_data()
        self.mesh = unit_mesh(4)
        self.fine = FineTestSpace(self.mesh, 1, self.data, refinement=16)
        self.constants = operator_constants(self.mesh, 1, self.fine)

    def run_with(self, solver, iterations=25):
        iterates = [TrialFunction.zeros(self.mesh, 1)]
        residual_norms = []

        def record(k, u, inner):
            iterates.append(u)
            residual_norms.append(inner.dual_norm)

        cfg = UzawaConfig(rho=self.constants.rho, eps=1e-14, max_iters=iterations)
        with self.assertLogs('uzawa_fem.uzawa', level='INFO'):
            state = run_uzawa(self.data, self.mesh, 1, cfg, residual_solver=solver, callback=record)
        return state, [mass_norm(u, 1.0) for u in iterates], residual_norms

    def test_constants_are_contractive(self):
        self.assertTrue(self.constants.contractive)
        self.assertGreater(self.constants.mu, 0.0)
        self.assertAlmostEqual(self.constants.rho, 1.0 / self.constants.cb ** 2, places=14)

    def test_error_contracts_by_omega(self):
        state, errors, _ = self.run_with(OracleResidualSolver(self.fine))
        self.assertGreater(state.k, 1)
        for previous, current in zip(errors[:-1], errors[1:]):
            if previous > 1e-9 * errors[0]:
                self.assertLessEqual(current, (self.constants.omega + 1e-9) * previous)

    def test_spectral_radius_matches_omega(self):
        radius = error_map_spectral_radius(self.mesh, 1, self.fine, self.constants.rho)
        self.assertAlmostEqual(radius, self.constants.omega, delta=1e-8)

    def test_inexact_residuals_within_tolerance(self):
        delta = 0.5 * self.constants.delta_star
        _, errors, residual_norms = self.run_with(OracleResidualSolver(self.fine, delta=delta, seed=3))
        cb = self.constants.cb
        bound = self.constants.omega + self.constants.rho * cb ** 2 * delta
        self.assertLess(bound, 1.0)
        for k, (previous, current) in enumerate(zip(errors[:-1], errors[1:])):
            if previous > 1e-9 * errors[0]:
                self.assertLessEqual(current, (bound + 1e-9) * previous)
                self.assertLessEqual(residual_norms[k], cb * (1.0 + delta) * previous * (1.0 + 1e-9))

    def test_exact_start_stops_after_one_step(self):
        cfg = UzawaConfig(rho=self.constants.rho, max_iters=10)
        start = TrialFunction.constant(self.mesh, 1, 1.0)
        state = run_uzawa(self.data, self.mesh, 1, cfg, residual_solver=OracleResidualSolver(self.fine), initial=start)
        self.assertTrue(state.converged)
        self.assertEqual((state.k, state.stop_reason), (1, 'step'))
        self.assertLess(state.dual_norm, 1e-12)


class RunUzawaTests(SimpleTestCase):
    def test_zero_iterations(self):
        state = run_uzawa(dirac_data(), unit_mesh(2), 0, UzawaConfig(rho=1.0, max_iters=0))
        self.assertEqual((state.k, state.history, state.converged), (0, (), False))
        self.assertTrue(np.isnan(state.dual_norm))
        np.testing.assert_array_equal(state.u.coeffs, np.zeros(2))

    def test_degenerate_residual_reports_iteration(self):
        def failing(u_h, data, warm=None, options=None):
            raise DegenerateResidualError('no valid start')

        with self.assertLogs('uzawa_fem.uzawa', level='ERROR'):
            with self.assertRaises(DegenerateResidualError) as raised:
                run_uzawa(dirac_data(), unit_mesh(1), 0, UzawaConfig(rho=1.0, max_iters=3), residual_solver=failing)
        self.assertEqual(raised.exception.iteration, 0)

    def test_network_residual_run(self):
        inner = InnerConfig(M=2, optimizer=SimplexOptions(max_evals=200))
        cfg = UzawaConfig(rho=1.0, max_iters=3, inner=inner)
        with self.assertLogs('uzawa_fem', level='WARNING'):
            state = run_uzawa(dirac_data(), unit_mesh(2), 0, cfg)
        self.assertEqual(state.k, len(state.history))
        self.assertEqual(state.r.M, 2)
        self.assertEqual([entry.k for entry in state.history], list(range(1, state.k + 1)))
        for entry in state.history:
            self.assertAlmostEqual(entry.dual_norm, np.sqrt(-2.0 * entry.J), places=10)
            self.assertGreater(entry.inner_evals, 0)
        self.assertLessEqual(state.history[-1].dual_norm, state.history[0].dual_norm)

    def test_network_run_from_exact_solution(self):
        mesh = unit_mesh(3)
        inner = InnerConfig(M=3, optimizer=SimplexOptions(max_evals=60))
        cfg = UzawaConfig(rho=1.0, max_iters=5, inner=inner)
        with self.assertLogs('uzawa_fem', level='INFO'):
            state = run_uzawa(consistent_data(), mesh, 1, cfg, initial=TrialFunction.constant(mesh, 1, 1.0))
        self.assertEqual((state.k, state.converged, state.stop_reason), (1, True, 'step'))
        self.assertLessEqual(state.dual_norm, 1e-8)
