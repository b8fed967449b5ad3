"""Oracles and theory checks.

A refined conforming P1 space (zero at the outflow end) stands in for V. It
gives the exact discrete Riesz residual, the discrete inf-sup and continuity
constants, the Uzawa contraction factor and the a posteriori indicator.
"""
from dataclasses import dataclass
import hashlib
import logging

import numpy as np
from django.conf import settings
from django.core.cache import cache
from scipy.integrate import quad
from scipy.linalg import eigh, svdvals

from .assembly import (
    TrialSpace,
    domain_partition,
    integrate_source,
    mass_matrix_U,
    spd_solve,
    v_inner_product,
    vnorm,
)
from .exceptions import InvalidArgumentError, SolverFailure
from .minres_inner import InnerResult
from .model import DiracSource, Mesh1D, ReluResidual, TrialFunction, combine_residuals, local_basis

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-12  # mu below this fraction of C_b counts as rank deficient
QUAD_LIMIT = 200


class FineTestSpace:
    """Conforming P1 hats on the trial mesh refined R times, zero at outflow"""

    def __init__(self, mesh, degree, data, refinement=None):
        if refinement is None:
            refinement = settings.MINRES['FINE_REFINEMENT']
        if refinement < 1:
            raise InvalidArgumentError(f"Fine refinement must be >= 1, got {refinement}")
        self.trial_mesh = mesh
        self.degree = degree
        self.data = data
        self.refinement = refinement
        self.mesh = mesh.refine(refinement)
        self.nodes = self.mesh.nodes
        self.dim = len(self.nodes) - 1
        self.gram = self._assemble_gram()
        self.coupling = self._assemble_coupling()
        self.load = self.load_for(data)

    @property
    def h(self):
        return float(np.min(self.mesh.h))

    def hat_values(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        cells = self.mesh.locate(x)
        t = (x - self.nodes[cells]) / self.mesh.h[cells]
        values = np.zeros((len(x), self.dim + 1))
        rows = np.arange(len(x))
        values[rows, cells] = 1.0 - t
        values[rows, cells + 1] = t
        return values[:, :self.dim]

    def hat_derivatives(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        cells = self.mesh.locate(x)
        slopes = np.zeros((len(x), self.dim + 1))
        rows = np.arange(len(x))
        slopes[rows, cells] = -1.0 / self.mesh.h[cells]
        slopes[rows, cells + 1] = 1.0 / self.mesh.h[cells]
        return slopes[:, :self.dim]

    def _assemble_gram(self):
        h = self.mesh.h
        beta = self.data.beta
        diagonal = np.zeros(self.dim + 1)
        diagonal[:-1] += h / 3.0 + beta ** 2 / h
        diagonal[1:] += h / 3.0 + beta ** 2 / h
        off = h / 6.0 - beta ** 2 / h
        gram = np.diag(diagonal) + np.diag(off, 1) + np.diag(off, -1)
        return gram[:self.dim, :self.dim]

    def _assemble_coupling(self):
        """coupling[i, j] = b(phi_j, hat_i)"""
        space = TrialSpace(self.trial_mesh, self.degree)
        partition = domain_partition(self.mesh.domain, self.nodes, order=self.degree + 3)
        x, w, cells = partition.quadrature()
        elements = self.trial_mesh.locate(partition.midpoints)[cells]
        trial = space.basis_matrix(x, elements)
        test = self.data.gamma * self.hat_values(x) - self.data.beta * self.hat_derivatives(x)
        return test.T @ (w[:, None] * trial)

    def load_for(self, data):
        load = integrate_source(self.hat_values, self.nodes, data.source, data.domain)
        if data.u_in != 0.0:
            inflow = data.domain.inflow(data.beta)
            load = load + data.beta * data.u_in * self.hat_values(np.array([inflow]))[0]
        return load

    def check_operator(self, data):
        if data.beta != self.data.beta or data.gamma != self.data.gamma:
            raise InvalidArgumentError("Fine space was assembled for different beta/gamma")


class FineResidual:
    """Element of the fine test space, held by its hat coefficients"""

    def __init__(self, fine, coeffs):
        self.fine = fine
        self.coeffs = np.asarray(coeffs, dtype=float)

    @property
    def vnorm(self):
        return float(np.sqrt(max(self.coeffs @ self.fine.gram @ self.coeffs, 0.0)))

    @property
    def nodal_values(self):
        return np.append(self.coeffs, 0.0)

    def __call__(self, x):
        return np.interp(x, self.fine.nodes, self.nodal_values)

    def adjoint_load(self, space, data):
        """b(phi_j, r) for every trial basis function"""
        self.fine.check_operator(data)
        space = TrialSpace.coerce(space)
        if space.degree != self.fine.degree or not np.array_equal(space.mesh.nodes, self.fine.trial_mesh.nodes):
            raise InvalidArgumentError("Fine residual belongs to a different trial mesh")
        return self.fine.coupling.T @ self.coeffs

    def to_relu(self):
        """The same function as sum_j c_j ReLU(x_j - x) over the fine nodes"""
        slopes = np.diff(self.nodal_values) / self.fine.mesh.h
        coeffs = np.empty_like(slopes)
        coeffs[:-1] = slopes[1:] - slopes[:-1]
        coeffs[-1] = -slopes[-1]
        return ReluResidual(self.fine.mesh.domain, self.fine.nodes[1:], coeffs)

    def perturbed(self, delta, rng):
        """self + delta * ||self||_V * (random unit V-norm direction)"""
        noise = rng.standard_normal(self.fine.dim)
        noise /= np.sqrt(noise @ self.fine.gram @ noise)
        return FineResidual(self.fine, self.coeffs + delta * self.vnorm * noise)


def oracle_residual(u_h, data, fine):
    """Riesz representer of l - b(u_h, .) in the fine test space"""
    fine.check_operator(data)
    load = fine.load if data is fine.data else fine.load_for(data)
    rhs = load - fine.coupling @ u_h.coeffs
    coeffs = spd_solve(fine.gram, rhs, error=SolverFailure, what='Fine V-norm Gram')
    return FineResidual(fine, coeffs)


@dataclass(frozen=True)
class OperatorConstants:
    mu: float
    cb: float
    omega: float
    delta_star: float
    rho: float

    @property
    def contractive(self):
        return self.omega < 1.0

    @property
    def quasi_optimality(self):
        return self.cb / self.mu if self.mu > 0 else np.inf


def contraction_factor(mu, cb, rho):
    return max(abs(1.0 - rho * mu ** 2), abs(1.0 - rho * cb ** 2))


def admissible_delta(omega, cb):
    return (1.0 - omega) / (2.0 * cb ** 2) if omega < 1.0 else 0.0


def constants_from_values(mu, cb, rho=None):
    """Contraction factor and admissible perturbation for measured mu, C_b"""
    rho = 1.0 / cb ** 2 if rho is None else rho
    if rho <= 0:
        raise InvalidArgumentError(f"Relaxation rho must be > 0, got {rho}")
    if mu <= RANK_TOLERANCE * cb:
        logger.warning(f"Coupling operator is rank deficient (mu = {mu:.3e}); omega set to 1")
        return OperatorConstants(mu, cb, 1.0, 0.0, rho)
    omega = contraction_factor(mu, cb, rho)
    if omega >= 1.0:
        logger.warning(f"rho = {rho:.6e} is not contractive (omega = {omega:.6f} >= 1)")
    return OperatorConstants(mu, cb, omega, admissible_delta(omega, cb), rho)


def _inverse_sqrt(matrix, what):
    eigenvalues, vectors = eigh(matrix)
    if eigenvalues[0] <= 0:
        condition = eigenvalues[-1] / eigenvalues[0] if eigenvalues[0] != 0 else np.inf
        raise SolverFailure(f"{what} matrix is not SPD (condition number {condition:.3e})")
    return (vectors / np.sqrt(eigenvalues)) @ vectors.T


def singular_values(coupling, mass, gram):
    """Singular values of G^-1/2 B M^-1/2, largest first"""
    normalized = _inverse_sqrt(gram, 'Test Gram') @ coupling @ _inverse_sqrt(mass, 'Trial mass')
    return svdvals(normalized)


def measured_constants(coupling, mass, gram):
    """(mu, C_b): smallest and largest singular value; mu = 0 for a wide coupling"""
    sigma = singular_values(coupling, mass, gram)
    mu = float(sigma[-1]) if coupling.shape[0] >= coupling.shape[1] else 0.0
    return mu, float(sigma[0])


def constants_from_matrices(coupling, mass, gram, rho=None):
    return constants_from_values(*measured_constants(coupling, mass, gram), rho)


class ConstantsCache:
    """Cache of measured (mu, C_b) keyed by trial mesh, degree and operator"""

    @staticmethod
    def key(fine):
        digest = hashlib.sha1(fine.trial_mesh.nodes.tobytes()).hexdigest()
        data = fine.data
        return f"minres_constants_{digest}_{fine.degree}_{fine.refinement}_{data.beta!r}_{data.gamma!r}"

    @staticmethod
    def get(fine):
        return cache.get(ConstantsCache.key(fine))

    @staticmethod
    def set(fine, values):
        cache.set(ConstantsCache.key(fine), values, settings.MINRES['CONSTANTS_CACHE_TIMEOUT'])


def operator_constants(mesh, p, fine, rho=None):
    """Discrete mu_h, C_b_h from the fine space, then omega and delta*"""
    if fine.refinement < 8:
        logger.warning(f"Fine refinement R={fine.refinement} is below 8; constants may be inaccurate")
    cached = ConstantsCache.get(fine)
    if cached is None:
        cached = measured_constants(fine.coupling, mass_matrix_U(mesh, p), fine.gram)
        ConstantsCache.set(fine, cached)
    mu, cb = cached
    constants = constants_from_values(mu, cb, rho)
    logger.info(
        f"Operator constants: mu={constants.mu:.6f} cb={constants.cb:.6f} "
        f"rho={constants.rho:.6f} omega={constants.omega:.6f}"
    )
    return constants


def oracle_gap(r_n, oracle, beta):
    """||r_bar_h - r_n||_V measured exactly on the union of knots"""
    difference = combine_residuals(-1.0, r_n, oracle.to_relu())
    return float(np.sqrt(max(v_inner_product(difference, difference, beta), 0.0)))


def aposteriori_indicator(residual_norm, oracle_gap_bound, mu):
    """(||r_n||_V + gap) / mu, an upper bound for ||u - u_h||"""
    if mu <= 0:
        raise InvalidArgumentError(f"mu must be > 0, got {mu}")
    return (residual_norm + oracle_gap_bound) / mu


class OracleResidualSolver:
    """Residual step backed by the fine-space Riesz map, optionally perturbed.

    With delta > 0 the returned residual is r_bar + delta ||r_bar|| eta for a
    seeded random unit V-norm direction eta.
    """

    def __init__(self, fine, delta=0.0, seed=0):
        if delta < 0:
            raise InvalidArgumentError(f"delta must be >= 0, got {delta}")
        self.fine = fine
        self.delta = delta
        self.rng = np.random.default_rng(seed)
        self.exact = None

    def __call__(self, u_h, data, warm=None, options=None):
        exact = oracle_residual(u_h, data, self.fine)
        self.exact = exact
        residual = exact.perturbed(self.delta, self.rng) if self.delta > 0 else exact
        return InnerResult(
            r_n=residual,
            J=-0.5 * exact.vnorm ** 2,
            dual_norm=residual.vnorm,
            evals=0,
            converged=True,
        )


@dataclass(frozen=True)
class ErrorReport:
    l2_error_u: float
    residual_expr_error: float
    dual_norm: float
    dofs_u: int
    dofs_r: int


def _cells(domain, points, pinned=()):
    """Cell boundaries through points and pinned; a point within the dedup
    tolerance of a pinned point is dropped in its favour"""
    points = np.asarray(points, dtype=float).reshape(-1)
    pinned = np.asarray(pinned, dtype=float).reshape(-1)
    if len(pinned) and len(points):
        distance = np.min(np.abs(points[:, None] - pinned[None, :]), axis=1)
        points = points[distance > domain.dedup_tolerance]
    return domain_partition(domain, np.concatenate((points, pinned))).points


def l2_error(u_h, exact, extra_points=()):
    """||u_h - u||_L2 by adaptive Gauss-Kronrod on cells split at every jump"""
    mesh = u_h.mesh
    points = _cells(mesh.domain, np.concatenate((mesh.nodes, extra_points)), exact.jumps)
    elements = mesh.locate(0.5 * (points[:-1] + points[1:]))
    total = 0.0
    for left, right, element in zip(points[:-1], points[1:], elements):
        def integrand(x, element=element):
            return (u_h.element_values([x], [element])[0] - exact(np.array([x]))[0]) ** 2

        value, _ = quad(integrand, left, right, limit=QUAD_LIMIT, epsabs=1e-15, epsrel=1e-12)
        total += value
    return float(np.sqrt(total))


def best_approximation(exact, mesh, p):
    """Direct L2 projection of the reference solution onto U_h"""
    reference_mass = mass_matrix_U(Mesh1D(np.array([0.0, 1.0])), p)
    coeffs = np.zeros((mesh.N, p + 1))
    for element in range(mesh.N):
        left, right = mesh.nodes[element], mesh.nodes[element + 1]
        width = right - left
        jumps = [x for x in exact.jumps if left < x < right]
        moments = np.zeros(p + 1)
        for k in range(p + 1):
            def integrand(x, k=k):
                return exact(np.array([x]))[0] * local_basis(p, [(x - left) / width])[0, k]

            value, _ = quad(
                integrand, left, right, points=jumps or None,
                limit=QUAD_LIMIT, epsabs=1e-15, epsrel=1e-12,
            )
            moments[k] = value
        coeffs[element] = np.linalg.solve(width * reference_mass, moments)
    return TrialFunction(mesh, p, coeffs.reshape(-1))


def default_exclusion_width(mesh):
    """Two fine-space cells around every Dirac location"""
    return 2.0 * float(np.min(mesh.h)) / settings.MINRES['FINE_REFINEMENT']


def residual_expression_error(r_n, data, exclusion_width):
    """||-beta r_n' + gamma r_n - f_smooth|| outside the Dirac windows"""
    source = data.source
    domain = data.domain
    windows = []
    if isinstance(source, DiracSource):
        half = 0.5 * exclusion_width
        windows = [(source.location - half, source.location + half)]
    points = list(r_n.breakpoints) + list(source.kinks)
    for left, right in windows:
        points += [left, right]
    partition = domain_partition(domain, points, order=4)
    x, w, cells = partition.quadrature()
    keep = np.ones(len(x), dtype=bool)
    midpoints = partition.midpoints[cells]
    for left, right in windows:
        keep &= ~((midpoints > left) & (midpoints < right))
    expression = -data.beta * r_n.derivative(x) + data.gamma * r_n.values(x)
    if not isinstance(source, DiracSource):
        expression = expression - source.density(x)
    return float(np.sqrt(np.sum(w[keep] * expression[keep] ** 2)))


def error_report(u_h, r_n, data, exact, exclusion_width=None):
    exclusion_width = exclusion_width or default_exclusion_width(u_h.mesh)
    return ErrorReport(
        l2_error_u=l2_error(u_h, exact, r_n.breakpoints),
        residual_expr_error=residual_expression_error(r_n, data, exclusion_width),
        dual_norm=vnorm(r_n, data.beta),
        dofs_u=u_h.dofs,
        dofs_r=r_n.M + int(r_n.include_constant),
    )
