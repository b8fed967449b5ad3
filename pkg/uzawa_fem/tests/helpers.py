from uzawa_fem.model import (
    DiracSource,
    Domain1D,
    PiecewiseConstantSource,
    ProblemData,
    build_uniform_mesh,
)

UNIT = Domain1D(0.0, 1.0)


def dirac_data(location=0.5, beta=1.0, gamma=0.0):
    return ProblemData(UNIT, beta, gamma, DiracSource(location))


def consistent_data():
    """u' + u = 1 with u(0) = 1: the exact solution u = 1 lies in every U_h"""
    return ProblemData(UNIT, 1.0, 1.0, PiecewiseConstantSource((), (1.0,)), u_in=1.0)


def unit_mesh(N):
    return build_uniform_mesh(UNIT, N)
