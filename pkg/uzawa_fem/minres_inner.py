"""Residual minimisation over the free-knot ReLU set.

Given u_h, find r_n minimising 1/2 ||v||_V^2 - <f - B u_h, v>. On fixed knots the
minimiser solves G c = l - B u_h exactly (variable projection); the knots are
moved by the bounded simplex method. Joint optimisation of coefficients and
knots is available for comparison.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from .assembly import (
    TrialMoments,
    assemble_rhs_vector,
    check_distinct,
    condition_number,
    gram_matrix_V,
    spd_solve,
)
from .exceptions import DegenerateResidualError, InvalidArgumentError, SingularBasisError
from .model import ReluResidual
from .optimizer import BoundedObjective, SimplexOptions, minimize_bounded

logger = logging.getLogger(__name__)

VARPRO = 'varpro'
JOINT = 'joint'
MODES = (VARPRO, JOINT)
DEFAULT_MARGIN = 1e-3  # fraction of the domain length kept free at the inflow end
SEPARATION_FACTOR = 10  # colliding knots are pushed 10 dedup tolerances apart


@dataclass(frozen=True)
class InnerConfig:
    """Residual-step settings; theta = (coefficients, breakpoints)"""

    M: int = 4
    mode: str = VARPRO
    margin: float = None  # None means DEFAULT_MARGIN * (b - a)
    warm_start: bool = True
    multistart: int = 1
    cold_restarts: bool = True  # False: once a warm start exists it replaces the cold starts
    seed: int = 0
    include_constant: bool = False
    coeff_bound: float = 100.0  # joint mode only
    optimizer: SimplexOptions = field(default_factory=SimplexOptions)

    def __post_init__(self):
        if self.M < 1:
            raise InvalidArgumentError(f"M must be >= 1, got {self.M}")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"Unknown residual mode {self.mode!r}, expected one of {MODES}")
        if self.multistart < 1:
            raise InvalidArgumentError(f"multistart must be >= 1, got {self.multistart}")
        if self.margin is not None and self.margin < 0:
            raise InvalidArgumentError(f"margin must be >= 0, got {self.margin}")
        if not self.coeff_bound > 0:
            raise InvalidArgumentError("coeff_bound must be > 0")

    def knot_bounds(self, domain):
        margin = DEFAULT_MARGIN * domain.length if self.margin is None else self.margin
        if margin >= domain.length:
            raise InvalidArgumentError(f"margin {margin} must be smaller than the domain length")
        return domain.a + margin, domain.b

    @property
    def basis_size(self):
        return self.M + int(self.include_constant)


class KnotSystem:
    """Gram matrix and right-hand side of the residual problem on fixed knots"""

    def __init__(self, breakpoints, u_h, data, include_constant=False, moments=None):
        self.domain = data.domain
        self.include_constant = include_constant
        self.breakpoints = check_distinct(breakpoints, data.domain)
        self.gram = gram_matrix_V(self.breakpoints, include_constant, data.beta, data.domain)
        self.load = assemble_rhs_vector(self.breakpoints, include_constant, data)
        moments = moments or TrialMoments(u_h)
        self.applied = moments.applied(self.breakpoints, include_constant, data.beta, data.gamma)
        self.rhs = self.load - self.applied

    def solve(self):
        return spd_solve(self.gram, self.rhs, what='V-norm Gram')

    def objective(self, c):
        return float(0.5 * c @ self.gram @ c - self.rhs @ c)

    def norm(self, c):
        return float(np.sqrt(max(c @ self.gram @ c, 0.0)))

    def residual(self, c):
        return ReluResidual.from_vector(self.domain, self.breakpoints, c, self.include_constant)


def solve_coeffs_given_breaks(breaks, u_h, data, include_constant=False):
    """Exact minimiser on fixed knots: returns (c, J) with J = -1/2 c^T G c.

    The knots are sorted first; c follows the sorted order.
    """
    system = KnotSystem(breaks, u_h, data, include_constant)
    c = system.solve()
    return c, -0.5 * float(c @ system.gram @ c)


def separate_knots(knots, lower, upper, tolerance):
    """Sort knots and push colliding ones SEPARATION_FACTOR tolerances apart"""
    knots = np.sort(np.asarray(knots, dtype=float))
    gap = SEPARATION_FACTOR * tolerance
    for i in range(1, len(knots)):
        if knots[i] - knots[i - 1] <= tolerance:
            knots[i] = knots[i - 1] + gap
    if len(knots) and knots[-1] > upper:
        knots[-1] = upper
        for i in range(len(knots) - 2, -1, -1):
            if knots[i + 1] - knots[i] <= tolerance:
                knots[i] = knots[i + 1] - gap
    return np.clip(knots, lower, upper)


def _system_with_recovery(knots, u_h, data, include_constant, bounds, moments=None):
    try:
        system = KnotSystem(knots, u_h, data, include_constant, moments)
        return system, system.solve()
    except SingularBasisError:
        moved = separate_knots(knots, bounds[0], bounds[1], data.domain.dedup_tolerance)
        system = KnotSystem(moved, u_h, data, include_constant, moments)
        return system, system.solve()


@dataclass(frozen=True, eq=False)
class InnerResult:
    r_n: ReluResidual
    J: float
    dual_norm: float
    evals: int
    converged: bool
    start_index: int = 0
    gram_condition: float = 1.0


def initial_knot_starts(cfg, domain):
    """Equispaced knots over (a + margin, b] plus seeded jittered copies"""
    lower, upper = cfg.knot_bounds(domain)
    spacing = (upper - lower) / cfg.M
    base = lower + spacing * np.arange(1, cfg.M + 1)
    base[-1] = upper
    starts = [base]
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.multistart - 1):
        jitter = rng.uniform(-0.5, 0.5, cfg.M) * spacing
        starts.append(np.sort(np.clip(base + jitter, lower, upper)))
    return starts


class _ResidualRun:
    """One bounded-simplex run of the residual objective from a start"""

    def __init__(self, u_h, data, cfg, bounds):
        self.u_h = u_h
        self.data = data
        self.cfg = cfg
        self.bounds = bounds
        self.moments = TrialMoments(u_h)

    def knot_objective(self, knots):
        try:
            system, c = _system_with_recovery(
                knots, self.u_h, self.data, self.cfg.include_constant, self.bounds, self.moments
            )
        except SingularBasisError:
            return np.inf
        return -0.5 * float(c @ system.gram @ c)

    def joint_objective(self, params):
        size = self.cfg.basis_size
        coeffs, knots = params[:size], params[size:]
        offset = int(self.cfg.include_constant)
        order = np.argsort(knots, kind='stable')
        coeffs = np.concatenate((coeffs[:offset], coeffs[offset:][order]))
        try:
            system = KnotSystem(knots[order], self.u_h, self.data, self.cfg.include_constant, self.moments)
        except SingularBasisError:
            return np.inf
        return system.objective(coeffs)

    def run(self, start, options):
        lower, upper = self.bounds
        M = self.cfg.M
        if self.cfg.mode == VARPRO:
            objective = BoundedObjective(self.knot_objective, np.full(M, lower), np.full(M, upper))
            result = minimize_bounded(objective, start, options)
            if not np.isfinite(result.fun):
                return None
            system, c = _system_with_recovery(
                result.x, self.u_h, self.data, self.cfg.include_constant, self.bounds, self.moments
            )
            J = -0.5 * float(c @ system.gram @ c)
        else:
            try:
                system, c0 = _system_with_recovery(
                    start, self.u_h, self.data, self.cfg.include_constant, self.bounds, self.moments
                )
            except SingularBasisError:
                return None
            bound = self.cfg.coeff_bound
            size = self.cfg.basis_size
            objective = BoundedObjective(
                self.joint_objective,
                np.concatenate((np.full(size, -bound), np.full(M, lower))),
                np.concatenate((np.full(size, bound), np.full(M, upper))),
            )
            x0 = np.concatenate((np.clip(c0, -bound, bound), system.breakpoints))
            result = minimize_bounded(objective, x0, options)
            if not np.isfinite(result.fun):
                return None
            params = result.x
            offset = int(self.cfg.include_constant)
            knots = params[size:]
            order = np.argsort(knots, kind='stable')
            c = np.concatenate((params[:offset], params[offset:size][order]))
            system = KnotSystem(knots[order], self.u_h, self.data, self.cfg.include_constant, self.moments)
            J = system.objective(c)
        return system, c, J, result


def minimize_residual(u_h, data, cfg, warm=None, options=None):
    """Best residual over all starts; the warm start (if any) is start 0"""
    bounds = cfg.knot_bounds(data.domain)
    starts = initial_knot_starts(cfg, data.domain)
    if warm is not None and cfg.warm_start and warm.M == cfg.M:
        warm_knots = np.clip(warm.breakpoints, bounds[0], bounds[1])
        starts = [warm_knots] + (starts if cfg.cold_restarts else [])
    options = options or cfg.optimizer

    runner = _ResidualRun(u_h, data, cfg, bounds)
    best = None
    evals = 0
    for index, start in enumerate(starts):
        outcome = runner.run(start, options)
        if outcome is None:
            logger.warning(f"Residual start {index} ended on a singular basis")
            continue
        system, c, J, result = outcome
        evals += result.evals
        if best is None or J < best[2]:
            best = (system, c, J, result, index)

    if best is None:
        raise DegenerateResidualError(f"All {len(starts)} residual starts hit singular bases")

    system, c, J, result, index = best
    return InnerResult(
        r_n=system.residual(c),
        J=J,
        dual_norm=system.norm(c),
        evals=evals,
        converged=result.converged,
        start_index=index,
        gram_condition=condition_number(system.gram),
    )


def dual_norm_estimate(res):
    """||r_n||_V: the supremum achieved over the network set"""
    return res.dual_norm
