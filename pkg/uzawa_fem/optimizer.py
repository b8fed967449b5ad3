"""Derivative-free bounded minimisation (Nelder-Mead inside a box).

Bounds are enforced with the sin^2 change of variables of fminsearchbnd:
x_i = lb_i + (ub_i - lb_i) * sin(y_i)^2, so the simplex moves freely in y while
every evaluated point stays inside [lb, ub].

A single run is sequential. Independent runs may share an objective only if
that objective is safe to call concurrently; nothing here assumes it is.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy.optimize import minimize

from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

EVALS_PER_DIMENSION = 400


@dataclass(frozen=True)
class SimplexOptions:
    """Nelder-Mead budget and tolerances"""

    max_evals: int = None  # None means 400 * dimension
    x_tol: float = 1e-8
    f_tol: float = 1e-8
    initial_step: float = 0.1  # fraction of the box width
    restarts: int = 1

    def __post_init__(self):
        if not (self.x_tol > 0 and self.f_tol > 0):
            raise InvalidArgumentError("Simplex tolerances must be > 0")
        if not 0 < self.initial_step <= 1:
            raise InvalidArgumentError(f"initial_step must be in (0, 1], got {self.initial_step}")
        if self.restarts < 0:
            raise InvalidArgumentError(f"restarts must be >= 0, got {self.restarts}")

    def budget(self, dimension):
        budget = self.max_evals if self.max_evals is not None else EVALS_PER_DIMENSION * dimension
        if budget < dimension + 1:
            raise InvalidArgumentError(
                f"max_evals={budget} cannot build a simplex in dimension {dimension}"
            )
        return budget

    def with_tolerance(self, tolerance):
        return SimplexOptions(self.max_evals, tolerance, tolerance, self.initial_step, self.restarts)


class BoundedObjective:
    """Objective on the box [lower, upper]; non-finite values count as +inf"""

    def __init__(self, objective, lower, upper):
        self.objective = objective
        self.lower = np.asarray(lower, dtype=float).reshape(-1)
        self.upper = np.asarray(upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape:
            raise InvalidArgumentError("Lower and upper bounds differ in length")
        if np.any(~(self.lower < self.upper)):
            raise InvalidArgumentError("Every lower bound must be below its upper bound")

    @property
    def dimension(self):
        return len(self.lower)

    @property
    def width(self):
        return self.upper - self.lower

    def to_box(self, y):
        x = self.lower + self.width * np.sin(np.asarray(y, dtype=float)) ** 2
        return np.clip(x, self.lower, self.upper)

    def from_box(self, x):
        fraction = np.clip((np.asarray(x, dtype=float) - self.lower) / self.width, 0.0, 1.0)
        return np.arcsin(np.sqrt(fraction))

    def __call__(self, x):
        value = float(self.objective(np.asarray(x, dtype=float)))
        return value if np.isfinite(value) else np.inf


class _EvaluationTracker:
    """Counts evaluations and keeps the best point seen so far"""

    def __init__(self, objective):
        self.objective = objective
        self.evals = 0
        self.best_x = None
        self.best_f = np.inf
        self.trace = []

    def __call__(self, x):
        value = self.objective(x)
        self.evals += 1
        if self.best_x is None or value < self.best_f:
            self.best_x = np.array(x, dtype=float)
            self.best_f = value
        self.trace.append(self.best_f)
        return value


@dataclass(frozen=True, eq=False)
class BoundedResult:
    x: np.ndarray
    fun: float
    evals: int
    converged: bool
    clamped: bool
    restarts_used: int
    best_trace: tuple


def _initial_simplex(objective, x_start, step):
    """x_start plus one step of step * width per coordinate, mapped to y"""
    vertices = [x_start]
    for i in range(objective.dimension):
        vertex = x_start.copy()
        delta = step * objective.width[i]
        vertex[i] = vertex[i] + delta if vertex[i] + delta <= objective.upper[i] else vertex[i] - delta
        vertices.append(vertex)
    return np.array([objective.from_box(vertex) for vertex in vertices])


def minimize_bounded(obj, x0, opts=None):
    """Nelder-Mead in transformed coordinates; returns the best point found"""
    opts = opts or SimplexOptions()
    dimension = obj.dimension
    budget = opts.budget(dimension)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if len(x0) != dimension:
        raise InvalidArgumentError(f"x0 has {len(x0)} entries for a {dimension}-dimensional box")

    clamped = bool(np.any((x0 < obj.lower) | (x0 > obj.upper)))
    if clamped:
        logger.warning("Starting point outside the box; clamping it to the bounds")
        x0 = np.clip(x0, obj.lower, obj.upper)

    tracker = _EvaluationTracker(obj)
    tracker(x0)
    converged = False
    restarts_used = 0

    for attempt in range(opts.restarts + 1):
        remaining = budget - tracker.evals
        if remaining < dimension + 1:
            break
        before = tracker.best_f
        simplex = _initial_simplex(obj, tracker.best_x.copy(), opts.initial_step)
        result = minimize(
            lambda y: tracker(obj.to_box(y)),
            simplex[0],
            method='Nelder-Mead',
            options={
                'initial_simplex': simplex,
                'xatol': opts.x_tol,
                'fatol': opts.f_tol,
                'maxfev': remaining,
                'adaptive': False,
            },
        )
        converged = result.status == 0
        restarts_used = attempt
        if attempt > 0 and before - tracker.best_f <= opts.f_tol:
            break

    if not converged:
        logger.warning(
            f"Simplex budget of {budget} evaluations exhausted (best value {tracker.best_f:.6e})"
        )

    return BoundedResult(
        x=tracker.best_x,
        fun=tracker.best_f,
        evals=tracker.evals,
        converged=converged,
        clamped=clamped,
        restarts_used=restarts_used,
        best_trace=tuple(tracker.trace),
    )
