import numpy as np
from django.test import SimpleTestCase

from uzawa_fem.exceptions import InvalidArgumentError
from uzawa_fem.optimizer import BoundedObjective, SimplexOptions, minimize_bounded


def quadratic(center):
    center = np.asarray(center, dtype=float)
    return lambda x: float(np.sum((x - center) ** 2))


class MinimizeBoundedTests(SimpleTestCase):
    def test_interior_minimum(self):
        obj = BoundedObjective(quadratic([0.3]), [0.0], [1.0])
        result = minimize_bounded(obj, [0.9])
        self.assertAlmostEqual(result.x[0], 0.3, delta=1e-4)
        self.assertTrue(result.converged)

    def test_active_bound(self):
        obj = BoundedObjective(lambda x: float(x[0]), [0.0], [1.0])
        result = minimize_bounded(obj, [0.5])
        self.assertLess(result.x[0], 1e-6)
        self.assertGreaterEqual(result.x[0], 0.0)

    def test_two_dimensions(self):
        obj = BoundedObjective(quadratic([0.2, 0.8]), [0.0, 0.0], [1.0, 1.0])
        result = minimize_bounded(obj, [0.5, 0.5])
        np.testing.assert_allclose(result.x, [0.2, 0.8], atol=1e-4)

    def test_iterates_stay_in_box(self):
        seen = []

        def objective(x):
            seen.append(np.array(x))
            return float(np.sum((x - 2.0) ** 2))

        obj = BoundedObjective(objective, [-1.0, 0.0], [1.0, 0.5])
        minimize_bounded(obj, [0.0, 0.25], SimplexOptions(max_evals=200))
        points = np.array(seen)
        self.assertTrue(np.all(points >= [-1.0, 0.0]))
        self.assertTrue(np.all(points <= [1.0, 0.5]))

    def test_budget_exhausted_returns_best_so_far(self):
        obj = BoundedObjective(quadratic([0.3]), [0.0], [1.0])
        with self.assertLogs('uzawa_fem.optimizer', level='WARNING'):
            result = minimize_bounded(obj, [0.9], SimplexOptions(max_evals=5, restarts=0))
        self.assertFalse(result.converged)
        self.assertLessEqual(result.fun, 0.36)

    def test_best_trace_is_nonincreasing(self):
        obj = BoundedObjective(quadratic([0.7, 0.1]), [0.0, 0.0], [1.0, 1.0])
        result = minimize_bounded(obj, [0.1, 0.9], SimplexOptions(restarts=2))
        self.assertTrue(np.all(np.diff(result.best_trace) <= 0.0))
        self.assertEqual(result.fun, result.best_trace[-1])
        self.assertEqual(len(result.best_trace), result.evals)

    def test_start_outside_box_is_clamped(self):
        obj = BoundedObjective(quadratic([0.3]), [0.0], [1.0])
        with self.assertLogs('uzawa_fem.optimizer', level='WARNING'):
            result = minimize_bounded(obj, [2.0])
        self.assertTrue(result.clamped)
        self.assertAlmostEqual(result.x[0], 0.3, delta=1e-4)

    def test_non_finite_values_count_as_infinite(self):
        obj = BoundedObjective(lambda x: np.nan if x[0] > 0.5 else float((x[0] - 0.2) ** 2), [0.0], [1.0])
        self.assertEqual(obj(np.array([0.9])), np.inf)
        result = minimize_bounded(obj, [0.4])
        self.assertAlmostEqual(result.x[0], 0.2, delta=1e-4)


class OptionsTests(SimpleTestCase):
    def test_default_budget_scales_with_dimension(self):
        self.assertEqual(SimplexOptions().budget(3), 1200)

    def test_budget_too_small_for_simplex(self):
        with self.assertRaises(InvalidArgumentError):
            SimplexOptions(max_evals=2).budget(2)

    def test_invalid_tolerance(self):
        with self.assertRaises(InvalidArgumentError):
            SimplexOptions(x_tol=0.0)

    def test_with_tolerance_keeps_budget(self):
        options = SimplexOptions(max_evals=50, restarts=3).with_tolerance(1e-3)
        self.assertEqual((options.max_evals, options.restarts, options.x_tol, options.f_tol), (50, 3, 1e-3, 1e-3))

    def test_bounds_must_be_ordered(self):
        with self.assertRaises(InvalidArgumentError):
            BoundedObjective(lambda x: 0.0, [1.0], [0.0])
