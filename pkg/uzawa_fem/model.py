"""Domain, problem data and the two function families of the method.

The trial space U_h holds discontinuous piecewise polynomials on a 1D mesh;
the residual set holds free-knot ReLU sums c_0 + sum_i c_i ReLU(b_i - x).
Every type here is an immutable value object.
"""
from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.integrate import solve_ivp

from .exceptions import (
    InvalidArgumentError,
    OutOfDomainError,
    SolutionUnavailable,
)

logger = logging.getLogger(__name__)

# Points closer than DEDUP_RTOL * (b - a) are treated as the same point
DEDUP_RTOL = 1e-14


def _frozen_array(values, dtype=float):
    array = np.array(values, dtype=dtype).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Domain1D:
    """Interval (a, b); inflow/outflow ends follow the sign of the advection"""

    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or self.a >= self.b:
            raise InvalidArgumentError(f"Domain requires a < b, got ({self.a}, {self.b})")

    @property
    def length(self):
        return self.b - self.a

    @property
    def dedup_tolerance(self):
        return DEDUP_RTOL * self.length

    def inflow(self, beta):
        return self.a if beta > 0 else self.b

    def outflow(self, beta):
        return self.b if beta > 0 else self.a

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.a) & (x <= self.b)

    def check(self, x):
        """Raise OutOfDomainError unless every x lies in [a, b]"""
        if not np.all(self.contains(x)):
            raise OutOfDomainError(f"Point(s) outside [{self.a}, {self.b}]: {x}")


class SourceTerm:
    """Right-hand side f of the transport equation"""

    kind = None
    is_singular = False

    def validate(self, domain):
        pass

    @property
    def kinks(self):
        """Locations where the source density is not smooth"""
        return ()

    def density(self, x):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SmoothSource(SourceTerm):
    """Source given by a vectorised callable density"""

    function: object
    kind = 'smooth'

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.function(x), dtype=float), x.shape)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantSource(SourceTerm):
    """Source with value values[k] on the k-th piece cut by the sorted breaks"""

    breaks: tuple = ()
    values: tuple = (0.0,)
    kind = 'piecewise'

    def __post_init__(self):
        object.__setattr__(self, 'breaks', _frozen_array(self.breaks))
        object.__setattr__(self, 'values', _frozen_array(self.values))
        if len(self.values) != len(self.breaks) + 1:
            raise InvalidArgumentError(
                f"Piecewise source needs len(values) == len(breaks) + 1, "
                f"got {len(self.values)} values for {len(self.breaks)} breaks"
            )
        if np.any(np.diff(self.breaks) <= 0):
            raise InvalidArgumentError("Piecewise source breaks must be strictly increasing")

    def validate(self, domain):
        if len(self.breaks) and (self.breaks[0] <= domain.a or self.breaks[-1] >= domain.b):
            raise InvalidArgumentError(
                f"Piecewise source breaks must lie strictly inside ({domain.a}, {domain.b})"
            )

    @property
    def kinks(self):
        return tuple(self.breaks)

    def density(self, x):
        # a point on a break belongs to the left piece
        pieces = np.searchsorted(self.breaks, np.asarray(x, dtype=float), side='left')
        return self.values[pieces]


@dataclass(frozen=True, eq=False)
class DiracSource(SourceTerm):
    """Point load at location; exact point evaluation or a Gaussian mollifier"""

    EXACT = 'exact'
    MOLLIFIED = 'mollified'

    location: float
    mode: str = 'exact'
    width: float = None
    kind = 'dirac'

    def __post_init__(self):
        if self.mode not in (self.EXACT, self.MOLLIFIED):
            raise InvalidArgumentError(f"Unknown Dirac mode: {self.mode}")
        if self.mode == self.MOLLIFIED and not (self.width and self.width > 0):
            raise InvalidArgumentError("Mollified Dirac source requires width > 0")

    @property
    def is_singular(self):
        return self.mode == self.EXACT

    def validate(self, domain):
        if not domain.a < self.location < domain.b:
            raise InvalidArgumentError(
                f"Dirac location {self.location} must lie inside ({domain.a}, {domain.b})"
            )

    @property
    def kinks(self):
        return (self.location,)

    def density(self, x):
        if self.mode == self.EXACT:
            raise InvalidArgumentError("An exact Dirac source has no density")
        x = np.asarray(x, dtype=float)
        scaled = (x - self.location) / self.width
        return np.exp(-0.5 * scaled ** 2) / (self.width * np.sqrt(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class ProblemData:
    """beta u' + gamma u = f on the domain, u = u_in on the inflow end"""

    domain: Domain1D
    beta: float
    gamma: float
    source: SourceTerm
    u_in: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgumentError(f"Advection speed beta must be > 0, got {self.beta}")
        if not self.gamma >= 0:
            raise InvalidArgumentError(f"Reaction gamma must be >= 0, got {self.gamma}")
        self.source.validate(self.domain)

    def homogeneous(self):
        """Same operator with zero source and zero inflow data"""
        return ProblemData(self.domain, self.beta, self.gamma, PiecewiseConstantSource(), 0.0)


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Strictly increasing nodes a = x_0 < ... < x_N = b"""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = _frozen_array(self.nodes)
        if len(nodes) < 2:
            raise InvalidArgumentError("A mesh needs at least one element")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgumentError("Mesh nodes must be strictly increasing")
        object.__setattr__(self, 'nodes', nodes)

    @property
    def N(self):
        return len(self.nodes) - 1

    @property
    def domain(self):
        return Domain1D(float(self.nodes[0]), float(self.nodes[-1]))

    @property
    def h(self):
        return np.diff(self.nodes)

    def locate(self, x):
        """Element index of each x; interior nodes go to the left element"""
        x = np.asarray(x, dtype=float)
        return np.clip(np.searchsorted(self.nodes, x, side='left') - 1, 0, self.N - 1)

    def refine(self, factor):
        """Split every element into `factor` equal pieces"""
        if factor < 1:
            raise InvalidArgumentError(f"Refinement factor must be >= 1, got {factor}")
        t = np.arange(factor) / factor
        inner = (self.nodes[:-1, None] + np.outer(self.h, t)).reshape(-1)
        return Mesh1D(np.append(inner, self.nodes[-1]))


def build_uniform_mesh(domain, N):
    """N equal elements spanning the domain"""
    if int(N) != N or N < 1:
        raise InvalidArgumentError(f"Element count must be >= 1, got {N}")
    return Mesh1D(np.linspace(domain.a, domain.b, int(N) + 1))


def local_basis(p, t):
    """Lagrange basis of degree p on equispaced nodes of [0, 1], evaluated at t"""
    t = np.asarray(t, dtype=float).reshape(-1)
    if p == 0:
        return np.ones((len(t), 1))
    nodes = np.linspace(0.0, 1.0, p + 1)
    values = np.ones((len(t), p + 1))
    for k in range(p + 1):
        for m in range(p + 1):
            if m != k:
                values[:, k] *= (t - nodes[m]) / (nodes[k] - nodes[m])
    return values


@dataclass(frozen=True, eq=False)
class TrialFunction:
    """Discontinuous piecewise polynomial: (p + 1) Lagrange values per element"""

    mesh: Mesh1D
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.degree < 0:
            raise InvalidArgumentError(f"Trial degree must be >= 0, got {self.degree}")
        coeffs = _frozen_array(self.coeffs)
        if len(coeffs) != self.mesh.N * (self.degree + 1):
            raise InvalidArgumentError(
                f"Expected {self.mesh.N * (self.degree + 1)} coefficients, got {len(coeffs)}"
            )
        object.__setattr__(self, 'coeffs', coeffs)

    @classmethod
    def zeros(cls, mesh, degree):
        return cls(mesh, degree, np.zeros(mesh.N * (degree + 1)))

    @classmethod
    def constant(cls, mesh, degree, value):
        return cls(mesh, degree, np.full(mesh.N * (degree + 1), float(value)))

    @property
    def dofs(self):
        return len(self.coeffs)

    def with_coeffs(self, coeffs):
        return TrialFunction(self.mesh, self.degree, coeffs)

    def element_values(self, x, elements):
        """Evaluate the polynomial of the given elements at x (no domain check)"""
        x = np.asarray(x, dtype=float).reshape(-1)
        elements = np.asarray(elements).reshape(-1)
        t = (x - self.mesh.nodes[elements]) / self.mesh.h[elements]
        local = self.coeffs.reshape(self.mesh.N, self.degree + 1)[elements]
        return np.sum(local_basis(self.degree, t) * local, axis=1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        self.mesh.domain.check(x)
        flat = x.reshape(-1)
        return self.element_values(flat, self.mesh.locate(flat)).reshape(x.shape)


def eval_trial(u, x):
    """Value of u at x; at interior nodes the left element wins"""
    return u(x)


@dataclass(frozen=True, eq=False)
class ReluResidual:
    """c_0 + sum_i c_i ReLU(b_i - x) with sorted, distinct b_i in (a, b]"""

    domain: Domain1D
    breakpoints: np.ndarray
    coeffs: np.ndarray
    include_constant: bool = False
    c0: float = 0.0

    def __post_init__(self):
        breakpoints = np.array(self.breakpoints, dtype=float).reshape(-1)
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        if len(breakpoints) != len(coeffs):
            raise InvalidArgumentError(
                f"{len(breakpoints)} breakpoints but {len(coeffs)} coefficients"
            )
        order = np.argsort(breakpoints, kind='stable')
        breakpoints, coeffs = breakpoints[order], coeffs[order]
        if len(breakpoints):
            if breakpoints[0] <= self.domain.a or breakpoints[-1] > self.domain.b:
                raise InvalidArgumentError(
                    f"Breakpoints must lie in ({self.domain.a}, {self.domain.b}]"
                )
            if np.any(np.diff(breakpoints) <= 0):
                raise InvalidArgumentError("Breakpoints must be distinct")
        if not self.include_constant and self.c0 != 0.0:
            raise InvalidArgumentError("c0 given but include_constant is False")
        object.__setattr__(self, 'breakpoints', _frozen_array(breakpoints))
        object.__setattr__(self, 'coeffs', _frozen_array(coeffs))
        object.__setattr__(self, 'c0', float(self.c0))

    @classmethod
    def zero(cls, domain, include_constant=False):
        return cls(domain, [], [], include_constant, 0.0)

    @classmethod
    def from_vector(cls, domain, breakpoints, vector, include_constant=False):
        """Build from a basis coefficient vector ([c0], c_1, ..., c_M)"""
        vector = np.asarray(vector, dtype=float)
        if include_constant:
            return cls(domain, breakpoints, vector[1:], True, vector[0])
        return cls(domain, breakpoints, vector, False, 0.0)

    @property
    def M(self):
        return len(self.breakpoints)

    @property
    def vector(self):
        """Coefficients in basis order ([1], ReLU(b_1 - x), ...)"""
        if self.include_constant:
            return np.concatenate(([self.c0], self.coeffs))
        return np.array(self.coeffs)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        ramps = np.maximum(0.0, self.breakpoints[None, :] - flat[:, None])
        return (self.c0 + ramps @ self.coeffs).reshape(x.shape)

    def derivative(self, x):
        # right-continuous: a knot at x itself does not contribute
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1)
        active = (self.breakpoints[None, :] > flat[:, None]).astype(float)
        return (-(active @ self.coeffs)).reshape(x.shape)

    def __call__(self, x):
        self.domain.check(x)
        return self.values(x)

    def lipschitz_bound(self):
        return float(np.sum(np.abs(self.coeffs)))


def eval_relu(v, x):
    """c_0 + sum_i c_i max(0, b_i - x)"""
    return v(x)


def eval_relu_deriv(v, x):
    """-sum_{b_i > x} c_i, the right-sided derivative at kinks"""
    v.domain.check(x)
    return v.derivative(x)


def combine_residuals(alpha, first, second):
    """alpha * first + second, formed on the union of both breakpoint sets"""
    domain = first.domain
    knots = np.concatenate((first.breakpoints, second.breakpoints))
    weights = np.concatenate((alpha * first.coeffs, second.coeffs))
    order = np.argsort(knots, kind='stable')
    knots, weights = knots[order], weights[order]
    merged_knots, merged_weights = [], []
    for knot, weight in zip(knots, weights):
        if merged_knots and knot - merged_knots[-1] <= domain.dedup_tolerance:
            merged_weights[-1] += weight
        else:
            merged_knots.append(knot)
            merged_weights.append(weight)
    include_constant = first.include_constant or second.include_constant
    return ReluResidual(
        domain, merged_knots, merged_weights, include_constant,
        alpha * first.c0 + second.c0,
    )


class ExactSolution:
    """Vectorised reference solution together with its jump locations"""

    def __init__(self, function, jumps=(), label='closed-form'):
        self.function = function
        self.jumps = tuple(jumps)
        self.label = label

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self.function(x), dtype=float).reshape(x.shape)


def exact_solution(data):
    """Closed form of beta u' + gamma u = f with u(inflow) = u_in.

    Available for piecewise-constant and Dirac sources (constant coefficients);
    raises SolutionUnavailable for smooth sources, where
    ode_reference_solution is the fallback.
    """
    beta, gamma, u_in = data.beta, data.gamma, data.u_in
    a = data.domain.a
    source = data.source

    if isinstance(source, PiecewiseConstantSource):
        starts = np.concatenate(([a], source.breaks))
        lengths = np.diff(np.concatenate((starts, [data.domain.b])))
        start_values = [u_in]
        for length, value in zip(lengths[:-1], source.values[:-1]):
            start_values.append(_piece_value(start_values[-1], value, length, beta, gamma))
        start_values = np.array(start_values)

        def piecewise(x):
            pieces = np.searchsorted(source.breaks, x, side='left')
            return _piece_value(
                start_values[pieces], source.values[pieces], x - starts[pieces], beta, gamma
            )

        return ExactSolution(piecewise, jumps=(), label='piecewise integrating factor')

    if isinstance(source, DiracSource):
        x0 = source.location

        def point_load(x):
            inflow = u_in * np.exp(-gamma * (x - a) / beta)
            jump = np.where(x >= x0, np.exp(-gamma * np.maximum(x - x0, 0.0) / beta) / beta, 0.0)
            return inflow + jump

        return ExactSolution(point_load, jumps=(x0,), label='dirac integrating factor')

    raise SolutionUnavailable(
        f"No closed form for a {source.kind} source; use ode_reference_solution"
    )


def _piece_value(start, value, offset, beta, gamma):
    if gamma == 0:
        return start + value * offset / beta
    steady = value / gamma
    return steady + (start - steady) * np.exp(-gamma * offset / beta)


def ode_reference_solution(data, rtol=1e-10, atol=1e-12):
    """Fine-grid ODE oracle for sources with a density (stiff-safe Radau)"""
    if data.source.is_singular:
        raise SolutionUnavailable("An exact Dirac source has no density to integrate")
    domain = data.domain

    def rhs(x, u):
        return (data.source.density(np.array([x]))[0] - data.gamma * u) / data.beta

    solution = solve_ivp(
        rhs, (domain.a, domain.b), [data.u_in], method='Radau',
        dense_output=True, rtol=rtol, atol=atol,
        max_step=domain.length / 256,
    )
    if not solution.success:
        logger.error(f"ODE reference solve failed: {solution.message}")
        raise SolutionUnavailable(f"ODE reference solve failed: {solution.message}")
    return ExactSolution(
        lambda x: solution.sol(x)[0], jumps=data.source.kinks, label='ode reference'
    )


def reference_solution(data):
    """Closed form when available, otherwise the ODE oracle"""
    try:
        return exact_solution(data)
    except SolutionUnavailable:
        logger.info("No closed form available, falling back to the ODE reference solution")
        return ode_reference_solution(data)
