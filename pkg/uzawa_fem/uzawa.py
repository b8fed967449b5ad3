"""Deep residual Uzawa iteration.

Each outer step finds the residual r^k by minimising over the network set
(warm-started from r^{k-1}) and then relaxes the trial function:
(u^{k+1}, w) = (u^k, w) + rho b(w, r^k) for every w in U_h.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from django.conf import settings

from .analysis import FineTestSpace, oracle_residual, operator_constants
from .assembly import assemble_b_vector, mass_matrix_U, spd_solve
from .exceptions import DegenerateResidualError, InvalidArgumentError, SolverFailure
from .minres_inner import InnerConfig, minimize_residual
from .model import ReluResidual, TrialFunction

logger = logging.getLogger(__name__)

STEP_NORMS = ('l2', 'euclidean')
INITIAL_GUESSES = ('zero', 'inflow')


def _setting(name):
    return settings.MINRES[name]


@dataclass(frozen=True)
class UzawaConfig:
    """Outer-loop settings; None fields take their value from settings.MINRES"""

    rho: float = None  # None means 1 / C_b^2 from the measured constants
    eps: float = None
    max_iters: int = None
    inner: InnerConfig = field(default_factory=InnerConfig)
    tol_start: float = None
    kappa: float = None
    tol_floor: float = None
    step_norm: str = 'l2'
    initial: str = 'zero'

    def __post_init__(self):
        defaults = {
            'eps': 'EPS',
            'max_iters': 'MAX_ITERS',
            'tol_start': 'INNER_TOL_START',
            'kappa': 'INNER_TOL_KAPPA',
            'tol_floor': 'INNER_TOL_FLOOR',
        }
        for name, key in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, _setting(key))

        if self.rho is not None and not self.rho > 0:
            raise InvalidArgumentError(f"rho must be > 0, got {self.rho}")
        if not self.eps > 0:
            raise InvalidArgumentError(f"eps must be > 0, got {self.eps}")
        if self.max_iters < 0:
            raise InvalidArgumentError(f"max_iters must be >= 0, got {self.max_iters}")
        if not 0 < self.kappa <= 1:
            raise InvalidArgumentError(f"kappa must be in (0, 1], got {self.kappa}")
        if not (self.tol_start > 0 and self.tol_floor > 0):
            raise InvalidArgumentError("Inner tolerances must be > 0")
        if self.step_norm not in STEP_NORMS:
            raise InvalidArgumentError(f"step_norm must be one of {STEP_NORMS}")
        if self.initial not in INITIAL_GUESSES:
            raise InvalidArgumentError(f"initial must be one of {INITIAL_GUESSES}")

    def inner_tolerance(self, k):
        return max(self.tol_start * self.kappa ** k, self.tol_floor)


@dataclass(frozen=True)
class HistoryEntry:
    k: int
    dual_norm: float
    J: float
    step_norm: float
    inner_evals: int


@dataclass(frozen=True, eq=False)
class UzawaState:
    k: int
    u: TrialFunction
    r: object  # ReluResidual, or a fine-space residual under an oracle solver
    history: tuple = ()
    rho: float = None
    converged: bool = False
    stop_reason: str = 'max_iters'

    @property
    def dual_norm(self):
        return self.history[-1].dual_norm if self.history else np.nan


def _adjoint_load(r, space, data):
    if isinstance(r, ReluResidual):
        return assemble_b_vector(space, r, data)
    return r.adjoint_load(space, data)


def primal_update(u, r, rho, data):
    """Solve M u_new = M u + rho g with g_j = b(phi_j, r)"""
    if rho == 0:
        return u
    mass = mass_matrix_U(u.mesh, u.degree)
    g = _adjoint_load(r, (u.mesh, u.degree), data)
    try:
        coeffs = spd_solve(mass, mass @ u.coeffs + rho * g, error=SolverFailure, what='Trial mass')
    except SolverFailure:
        logger.error(f"Mass solve failed on a mesh with {u.mesh.N} elements")
        raise
    return u.with_coeffs(coeffs)


def check_convergence(prev, next, cfg):
    """(step_norm, stop) with step_norm the mass or Euclidean norm of next - prev"""
    d = next.coeffs - prev.coeffs
    if cfg.step_norm == 'euclidean':
        step = float(np.linalg.norm(d))
    else:
        mass = mass_matrix_U(prev.mesh, prev.degree)
        step = float(np.sqrt(max(d @ mass @ d, 0.0)))
    return step, step < cfg.eps


def initial_guess(data, mesh, p, cfg):
    if cfg.initial == 'inflow':
        return TrialFunction.constant(mesh, p, data.u_in)
    return TrialFunction.zeros(mesh, p)


def default_rho(data, mesh, p):
    fine = FineTestSpace(mesh, p, data)
    return operator_constants(mesh, p, fine).rho


def run_uzawa(data, mesh, p, cfg, residual_solver=None, initial=None, callback=None):
    """Alternate residual minimisation and primal relaxation until the step
    drops below eps or max_iters is reached.

    residual_solver(u_h, data, warm=None, options=None) replaces the network
    residual step; it must return an object with r_n, J, dual_norm and evals.
    callback(k, u, inner) runs after every outer step.
    """
    rho = cfg.rho if cfg.rho is not None else default_rho(data, mesh, p)
    u = initial if initial is not None else initial_guess(data, mesh, p, cfg)
    r = ReluResidual.zero(data.domain, cfg.inner.include_constant)

    if residual_solver is None:
        def residual_solver(u_h, data, warm=None, options=None):
            return minimize_residual(u_h, data, cfg.inner, warm=warm, options=options)

    history = []
    converged = False
    warm = None
    for k in range(cfg.max_iters):
        options = cfg.inner.optimizer.with_tolerance(cfg.inner_tolerance(k))
        try:
            inner = residual_solver(u, data, warm=warm, options=options)
        except DegenerateResidualError as e:
            logger.error(f"Residual step failed at Uzawa iteration {k}: {e}")
            raise DegenerateResidualError(f"Uzawa iteration {k}: {e}", iteration=k) from e

        u_next = primal_update(u, inner.r_n, rho, data)
        step, stop = check_convergence(u, u_next, cfg)
        if not np.isfinite(step):
            raise SolverFailure(f"Non-finite Uzawa step at iteration {k}")

        history.append(HistoryEntry(k + 1, inner.dual_norm, inner.J, step, inner.evals))
        logger.info(
            f"Uzawa {k + 1}: dual_norm={inner.dual_norm:.6e} J={inner.J:.6e} "
            f"step={step:.6e} evals={inner.evals}"
        )
        u, r = u_next, inner.r_n
        warm = r if isinstance(r, ReluResidual) else None
        if callback is not None:
            callback(k + 1, u, inner)
        if stop:
            converged = True
            break

    stop_reason = 'step' if converged else 'max_iters'
    if not converged and cfg.max_iters > 0:
        logger.warning(f"Uzawa stopped after {cfg.max_iters} iterations without meeting eps={cfg.eps}")
    return UzawaState(
        k=len(history),
        u=u,
        r=r,
        history=tuple(history),
        rho=rho,
        converged=converged,
        stop_reason=stop_reason,
    )


def error_map(mesh, p, fine, rho):
    """Matrix of one exact-residual Uzawa step on the error, column by column"""
    homogeneous = fine.data.homogeneous()
    dofs = mesh.N * (p + 1)
    columns = []
    for j in range(dofs):
        u = TrialFunction(mesh, p, np.eye(dofs)[j])
        r = oracle_residual(u, homogeneous, fine)
        columns.append(primal_update(u, r, rho, homogeneous).coeffs)
    return np.column_stack(columns)


def error_map_spectral_radius(mesh, p, fine, rho):
    return float(np.max(np.abs(np.linalg.eigvals(error_map(mesh, p, fine, rho)))))
