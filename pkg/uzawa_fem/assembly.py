"""Exact quadrature on merged partitions and assembly of all forms.

On every cell of the union of mesh nodes and breakpoints, trial functions and
ReLU sums are single polynomials, so Gauss-Legendre rules of order p + 3 make
every integral below exact.
"""
from dataclasses import dataclass
import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import InvalidArgumentError, SingularBasisError
from .model import DiracSource, local_basis

logger = logging.getLogger(__name__)

GAUSS_ORDER_EXTRA = 3  # q = p + 3 per merged cell
SOURCE_SUBCELLS = 64  # uniform subdivision for smooth source densities
MOLLIFIER_SPAN = 8  # mollifier cells cover location +/- 8 widths
ILL_CONDITIONED = 1e12


@dataclass(frozen=True, eq=False)
class MergedPartition:
    """Sorted, deduplicated cell boundaries with a per-cell Gauss rule"""

    points: np.ndarray
    order: int

    @property
    def cells(self):
        return len(self.points) - 1

    @property
    def midpoints(self):
        return 0.5 * (self.points[:-1] + self.points[1:])

    def quadrature(self):
        """Return (nodes, weights, cell index) of the composite rule"""
        ref_nodes, ref_weights = np.polynomial.legendre.leggauss(self.order)
        left = self.points[:-1, None]
        width = np.diff(self.points)[:, None]
        nodes = left + 0.5 * width * (ref_nodes[None, :] + 1.0)
        weights = 0.5 * width * ref_weights[None, :]
        cells = np.repeat(np.arange(self.cells), self.order)
        return nodes.reshape(-1), weights.reshape(-1), cells


def _sorted_unique(points, tolerance):
    points = np.sort(np.asarray(points, dtype=float).reshape(-1))
    if len(points) == 0:
        return points
    keep = np.concatenate(([True], np.diff(points) > tolerance))
    return points[keep]


def merged_partition(mesh, breakpoints, order=None, degree=1):
    """Union of mesh nodes and breakpoints; mesh nodes win near-collisions"""
    domain = mesh.domain
    tolerance = domain.dedup_tolerance
    breaks = np.asarray(breakpoints, dtype=float).reshape(-1)
    if np.any((breaks < domain.a) | (breaks > domain.b)):
        raise InvalidArgumentError(f"Breakpoints must lie within [{domain.a}, {domain.b}]")
    nodes = mesh.nodes
    if len(breaks):
        right = np.clip(np.searchsorted(nodes, breaks), 0, len(nodes) - 1)
        left = np.clip(right - 1, 0, len(nodes) - 1)
        gap = np.minimum(np.abs(breaks - nodes[left]), np.abs(breaks - nodes[right]))
        breaks = _sorted_unique(breaks[gap > tolerance], tolerance)
    points = np.sort(np.concatenate((nodes, breaks)))
    return MergedPartition(points, order or degree + GAUSS_ORDER_EXTRA)


def domain_partition(domain, points=(), order=3):
    """Partition of the bare domain by the given interior points"""
    inner = np.asarray(points, dtype=float).reshape(-1)
    inner = inner[(inner > domain.a) & (inner < domain.b)]
    all_points = _sorted_unique(np.concatenate(([domain.a], inner, [domain.b])), domain.dedup_tolerance)
    all_points[-1] = domain.b
    return MergedPartition(all_points, order)


class TrialSpace:
    """Discontinuous P_p space on a mesh with element-local Lagrange dofs"""

    def __init__(self, mesh, degree):
        if degree < 0:
            raise InvalidArgumentError(f"Trial degree must be >= 0, got {degree}")
        self.mesh = mesh
        self.degree = degree

    @classmethod
    def coerce(cls, space):
        """Accept a TrialSpace or a (mesh, degree) pair"""
        if isinstance(space, cls):
            return space
        mesh, degree = space
        return cls(mesh, degree)

    @property
    def dofs(self):
        return self.mesh.N * (self.degree + 1)

    def basis_matrix(self, x, elements):
        """Dense (len(x), dofs) matrix of global basis values"""
        x = np.asarray(x, dtype=float).reshape(-1)
        elements = np.asarray(elements).reshape(-1)
        width = self.degree + 1
        t = (x - self.mesh.nodes[elements]) / self.mesh.h[elements]
        matrix = np.zeros((len(x), self.dofs))
        rows = np.arange(len(x))[:, None]
        columns = elements[:, None] * width + np.arange(width)[None, :]
        matrix[rows, columns] = local_basis(self.degree, t)
        return matrix


class ReluBasis:
    """Basis ([1], ReLU(b_1 - x), ..., ReLU(b_M - x)) of a knot set"""

    def __init__(self, breakpoints, include_constant=False):
        self.breakpoints = np.asarray(breakpoints, dtype=float).reshape(-1)
        self.include_constant = include_constant

    @property
    def size(self):
        return len(self.breakpoints) + int(self.include_constant)

    def values(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        ramps = np.maximum(0.0, self.breakpoints[None, :] - x[:, None])
        if self.include_constant:
            return np.hstack((np.ones((len(x), 1)), ramps))
        return ramps

    def derivatives(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        slopes = -(self.breakpoints[None, :] > x[:, None]).astype(float)
        if self.include_constant:
            return np.hstack((np.zeros((len(x), 1)), slopes))
        return slopes


def _symmetrize(matrix):
    upper = np.triu(matrix)
    return upper + np.triu(matrix, 1).T


def check_distinct(breakpoints, domain):
    """Raise SingularBasisError when two breakpoints collapse"""
    breaks = np.sort(np.asarray(breakpoints, dtype=float).reshape(-1))
    if np.any((breaks <= domain.a) | (breaks > domain.b)):
        raise InvalidArgumentError(f"Breakpoints must lie in ({domain.a}, {domain.b}]")
    if np.any(np.diff(breaks) <= domain.dedup_tolerance):
        raise SingularBasisError("Duplicate breakpoints give a singular ReLU basis")
    return breaks


def assemble_b_matrix(space, breakpoints, include_constant, beta, gamma):
    """B[j, i] = b(phi_j, psi_i) = int phi_j (gamma psi_i - beta psi_i')"""
    space = TrialSpace.coerce(space)
    basis = ReluBasis(breakpoints, include_constant)
    partition = merged_partition(space.mesh, basis.breakpoints, degree=space.degree)
    x, w, cells = partition.quadrature()
    elements = space.mesh.locate(partition.midpoints)[cells]
    trial = space.basis_matrix(x, elements)
    test = gamma * basis.values(x) - beta * basis.derivatives(x)
    return trial.T @ (w[:, None] * test)


def assemble_b_vector(uh_space, v, data):
    """Vector of b(phi_j, v) over the trial basis"""
    matrix = assemble_b_matrix(uh_space, v.breakpoints, v.include_constant, data.beta, data.gamma)
    return matrix @ v.vector


class TrialMoments:
    """Running moments F_k(t) = int_a^t x^k u_h(x) dx (k = 0, 1) of a trial function.

    b(u_h, ReLU(b - .)) = gamma (b F_0(b) - F_1(b)) + beta F_0(b), so B^T u_h on a
    knot set costs O(M) once the element totals are stored.
    """

    def __init__(self, u_h):
        mesh = u_h.mesh
        self.mesh = mesh
        self.degree = u_h.degree
        self.local = u_h.coeffs.reshape(mesh.N, u_h.degree + 1)
        ref_nodes, ref_weights = np.polynomial.legendre.leggauss(u_h.degree + 2)
        self.ref_t = 0.5 * (ref_nodes + 1.0)
        self.ref_w = 0.5 * ref_weights

        x = mesh.nodes[:-1, None] + mesh.h[:, None] * self.ref_t[None, :]
        weighted = mesh.h[:, None] * self.ref_w[None, :] * (self.local @ local_basis(u_h.degree, self.ref_t).T)
        self.first = np.concatenate(([0.0], np.cumsum(np.sum(weighted, axis=1))))
        self.second = np.concatenate(([0.0], np.cumsum(np.sum(weighted * x, axis=1))))

    @property
    def total(self):
        return float(self.first[-1])

    def at(self, t):
        """(F_0(t), F_1(t)) for an array of points in the domain"""
        t = np.asarray(t, dtype=float).reshape(-1)
        elements = self.mesh.locate(t)
        left = self.mesh.nodes[elements]
        span = t - left
        x = left[:, None] + span[:, None] * self.ref_t[None, :]
        local_t = (x - left[:, None]) / self.mesh.h[elements][:, None]
        basis = local_basis(self.degree, local_t.reshape(-1)).reshape(len(t), len(self.ref_t), -1)
        values = np.einsum('mqk,mk->mq', basis, self.local[elements])
        weighted = span[:, None] * self.ref_w[None, :] * values
        return (
            self.first[elements] + np.sum(weighted, axis=1),
            self.second[elements] + np.sum(weighted * x, axis=1),
        )

    def applied(self, breakpoints, include_constant, beta, gamma):
        """(B^T u_h)_i = b(u_h, psi_i), equal to assemble_b_matrix(...).T @ u_h.coeffs"""
        breaks = np.asarray(breakpoints, dtype=float).reshape(-1)
        first, second = self.at(breaks)
        values = gamma * (breaks * first - second) + beta * first
        if include_constant:
            return np.concatenate(([gamma * self.total], values))
        return values


def integrate_source(basis_values, kinks, source, domain):
    """Vector of l(psi_i) = int f psi_i for a piecewise-linear basis.

    `basis_values` maps points to a (points, basis) matrix and `kinks` are the
    points where the basis is not smooth.
    """
    if isinstance(source, DiracSource) and source.mode == DiracSource.EXACT:
        return basis_values(np.array([source.location]))[0]
    if isinstance(source, DiracSource):
        offsets = source.width * np.arange(-MOLLIFIER_SPAN, MOLLIFIER_SPAN + 1)
        points = np.concatenate((np.asarray(kinks, dtype=float), source.location + offsets))
        partition = domain_partition(domain, points, order=12)
    elif source.kind == 'piecewise':
        points = np.concatenate((np.asarray(kinks, dtype=float), source.kinks))
        partition = domain_partition(domain, points, order=3)
    else:
        uniform = np.linspace(domain.a, domain.b, SOURCE_SUBCELLS + 1)
        points = np.concatenate((np.asarray(kinks, dtype=float), uniform, source.kinks))
        partition = domain_partition(domain, points, order=10)
    x, w, _ = partition.quadrature()
    return basis_values(x).T @ (w * source.density(x))


def assemble_load(v, source):
    """l(v) = int f v, or v(x0) for an exact Dirac source"""
    values = integrate_source(lambda x: v.values(x)[:, None], v.breakpoints, source, v.domain)
    return float(values[0])


def assemble_rhs_vector(breakpoints, include_constant, data):
    """l(psi_i) + beta u_in psi_i(inflow) for every basis function"""
    basis = ReluBasis(breakpoints, include_constant)
    load = integrate_source(basis.values, basis.breakpoints, data.source, data.domain)
    if data.u_in != 0.0:
        inflow = data.domain.inflow(data.beta)
        load = load + data.beta * data.u_in * basis.values(np.array([inflow]))[0]
    return load


def assemble_rhs(v, data):
    """Right-hand side functional including the inflow boundary term"""
    return float(assemble_rhs_vector(v.breakpoints, v.include_constant, data) @ v.vector)


def gram_matrix_V(breaks, c0_included, beta, domain):
    """G_ij = int psi_i psi_j + beta^2 psi_i' psi_j' for the ReLU basis.

    Both ramps of a pair live on [a, min(b_i, b_j)], so every entry is a cubic
    in the breakpoints and no quadrature is needed.
    """
    breaks = check_distinct(breaks, domain)
    low = np.minimum.outer(breaks, breaks)
    span = low - domain.a
    di = breaks[:, None] - low
    dj = breaks[None, :] - low
    gram = di * dj * span + 0.5 * (di + dj) * span ** 2 + span ** 3 / 3.0 + beta ** 2 * span
    if c0_included:
        border = 0.5 * (breaks - domain.a) ** 2
        gram = np.block([
            [np.array([[domain.length]]), border[None, :]],
            [border[:, None], gram],
        ])
    return _symmetrize(gram)


def mass_matrix_U(mesh, p):
    """Block-diagonal L2 mass matrix of the discontinuous trial space"""
    ref_nodes, ref_weights = np.polynomial.legendre.leggauss(p + 2)
    t = 0.5 * (ref_nodes + 1.0)
    local = local_basis(p, t)
    reference = local.T @ (0.5 * ref_weights[:, None] * local)
    return _symmetrize(np.kron(np.diag(mesh.h), reference))


def vnorm(v, beta, domain=None):
    """sqrt(c^T G c): the V-norm of a ReLU sum"""
    if v.M == 0 and not v.include_constant:
        return 0.0
    gram = gram_matrix_V(v.breakpoints, v.include_constant, beta, domain or v.domain)
    c = v.vector
    return float(np.sqrt(max(c @ gram @ c, 0.0)))


def v_inner_product(first, second, beta):
    """(first, second)_V by exact quadrature on the union of both knot sets"""
    domain = first.domain
    points = np.concatenate((first.breakpoints, second.breakpoints))
    x, w, _ = domain_partition(domain, points, order=3).quadrature()
    values = first.values(x) * second.values(x)
    slopes = first.derivative(x) * second.derivative(x)
    return float(w @ values + beta ** 2 * (w @ slopes))


def spd_factor(matrix, error=SingularBasisError, what='Gram'):
    """Cholesky factor of a symmetric matrix; failure raises `error`"""
    try:
        return cho_factor(matrix, lower=False, check_finite=True)
    except (LinAlgError, ValueError) as e:
        raise error(f"{what} matrix is not positive definite: {e}") from e


def spd_solve(matrix, rhs, error=SingularBasisError, what='Gram'):
    """Solve with a symmetric factorisation; no silent pseudo-inverse"""
    return cho_solve(spd_factor(matrix, error, what), rhs)


def condition_number(matrix):
    """2-norm condition number, logged when it exceeds ILL_CONDITIONED"""
    if matrix.size == 0:
        return 1.0
    condition = float(np.linalg.cond(matrix))
    if condition > ILL_CONDITIONED:
        logger.warning(f"Ill-conditioned matrix: cond = {condition:.3e}")
    return condition
