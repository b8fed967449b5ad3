"""Experiment runners: single cases, convergence studies and the 2D residual fit.

Every runner writes CSV tables (full-precision scientific notation, stable
headers) and, on request, render-only SVG charts.
"""
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
import logging
import time

import numpy as np
import pandas as pd
from celery import group
from django.conf import settings

from . import plotting
from .analysis import (
    FineTestSpace,
    aposteriori_indicator,
    best_approximation,
    error_report,
    l2_error,
    operator_constants,
    oracle_gap,
    oracle_residual,
)
from .assembly import condition_number, gram_matrix_V, mass_matrix_U
from .config import CASE_IDS
from .exceptions import InvalidArgumentError
from .minres_inner import VARPRO, InnerConfig, minimize_residual
from .model import (
    DiracSource,
    Domain1D,
    PiecewiseConstantSource,
    ProblemData,
    TrialFunction,
    build_uniform_mesh,
    reference_solution,
)
from .optimizer import BoundedObjective, SimplexOptions, minimize_bounded
from .uzawa import UzawaConfig, run_uzawa

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17e'
UNIT_INTERVAL = Domain1D(0.0, 1.0)

# (N, M) pairs shown for each case in the published figures
FIGURE_CONFIGS = {
    'case1': ((1, 4), (2, 6), (4, 7)),
    'case2': ((1, 2), (3, 5)),
    'case3': ((1, 2), (2, 3), (4, 4)),
}
M_RULES = ('N', '2N', '4N', 'fixed')

HISTORY_COLUMNS = ['k', 'dual_norm', 'J', 'step_norm', 'inner_evals']
CONVERGENCE_COLUMNS = [
    'N', 'M', 'dofs_u', 'l2_error_u', 'residual_expr_error', 'dual_norm', 'iters', 'wall_seconds',
]


def write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    logger.info(f"Wrote {path}")


def parse_source(text):
    """dirac:X, constant:V or piecewise:B1,B2;V1,V2,V3"""
    try:
        kind, _, body = str(text).partition(':')
        kind = kind.strip().lower()
        if kind == 'dirac':
            return DiracSource(float(body))
        if kind == 'constant':
            return PiecewiseConstantSource((), (float(body),))
        if kind == 'piecewise':
            breaks, _, values = body.partition(';')
            return PiecewiseConstantSource(
                tuple(float(b) for b in breaks.split(',') if b.strip()),
                tuple(float(v) for v in values.split(',') if v.strip()),
            )
    except ValueError as e:
        raise InvalidArgumentError(f"Cannot parse source {text!r}: {e}") from e
    raise InvalidArgumentError(f"Unknown source kind in {text!r}")


@dataclass(frozen=True)
class CaseSpec:
    case_id: str = 'case2'
    N: int = 4
    M: int = 8
    p: int = 1
    beta: float = None
    gamma: float = None
    source: str = None
    u_in: float = None
    rho: float = None
    eps: float = None
    max_iters: int = None
    mode: str = VARPRO
    multistart: int = 1
    cold_restarts: bool = True
    max_evals: int = None
    seed: int = None
    refinement: int = None
    include_constant: bool = False
    out_dir: str = None
    svg: bool = True

    def __post_init__(self):
        if self.case_id not in CASE_IDS:
            raise InvalidArgumentError(f"Unknown case {self.case_id!r}, expected one of {CASE_IDS}")
        if self.N < 1 or self.M < 1 or self.p < 0:
            raise InvalidArgumentError(f"Need N >= 1, M >= 1 and p >= 0, got {self.N}, {self.M}, {self.p}")
        if self.beta is not None and self.case_id not in ('case1', 'custom'):
            raise InvalidArgumentError("beta can only be overridden for case1 and custom cases")
        if self.case_id != 'custom' and any(
            value is not None for value in (self.gamma, self.source, self.u_in)
        ):
            raise InvalidArgumentError("gamma, source and u_in are only used by custom cases")
        if self.case_id == 'custom' and (self.beta is None or self.gamma is None or self.source is None):
            raise InvalidArgumentError("A custom case needs beta, gamma and source")
        if self.seed is None:
            object.__setattr__(self, 'seed', settings.MINRES['SEED'])
        if self.out_dir is None:
            object.__setattr__(self, 'out_dir', settings.MINRES['OUTPUT_DIR'])

    @classmethod
    def from_options(cls, options):
        """Build from command options, ignoring unset values"""
        names = {
            'case': 'case_id', 'with_constant': 'include_constant', 'out': 'out_dir',
        }
        fields = set(cls.__dataclass_fields__)
        kwargs = {}
        for key, value in options.items():
            name = names.get(key, key)
            if value is not None and name in fields:
                kwargs[name] = value
        return cls(**kwargs)

    def problem_data(self):
        if self.case_id == 'case1':
            beta = 0.001 if self.beta is None else self.beta
            return ProblemData(UNIT_INTERVAL, beta, 1.0, PiecewiseConstantSource((0.5,), (1.0, 0.0)))
        if self.case_id == 'case2':
            return ProblemData(UNIT_INTERVAL, 1.0, 0.0, DiracSource(0.5))
        if self.case_id == 'case3':
            return ProblemData(UNIT_INTERVAL, 1.0, 0.0, DiracSource(2.0 / 3.0))
        return ProblemData(
            UNIT_INTERVAL, self.beta, self.gamma, parse_source(self.source), self.u_in or 0.0
        )

    def mesh(self):
        return build_uniform_mesh(UNIT_INTERVAL, self.N)

    def inner_config(self):
        return InnerConfig(
            M=self.M,
            mode=self.mode,
            multistart=self.multistart,
            cold_restarts=self.cold_restarts,
            seed=self.seed,
            include_constant=self.include_constant,
            optimizer=SimplexOptions(max_evals=self.max_evals),
        )

    def uzawa_config(self, rho):
        return UzawaConfig(rho=rho, eps=self.eps, max_iters=self.max_iters, inner=self.inner_config())

    def output_path(self):
        path = Path(self.out_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def as_dict(self):
        return asdict(self)


@dataclass(eq=False)
class CaseResult:
    spec: CaseSpec
    state: object
    constants: object
    report: dict
    wall_seconds: float
    paths: list = field(default_factory=list)


def largest_kink(r):
    """Breakpoint carrying the largest-magnitude coefficient"""
    if r.M == 0:
        return np.nan
    return float(r.breakpoints[np.argmax(np.abs(r.coeffs))])


def write_diagnostics(out_dir, spec, error):
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    path = path / 'diagnostics.txt'
    lines = [
        f"error: {type(error).__name__}",
        f"message: {error}",
        f"iteration: {getattr(error, 'iteration', None)}",
    ]
    lines += [f"{key}: {value}" for key, value in asdict(spec).items()]
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.error(f"Wrote diagnostics to {path}")
    return path


def _case_report(spec, state, constants, data, fine):
    mesh = spec.mesh()
    exact = reference_solution(data)
    report = error_report(state.u, state.r, data, exact, exclusion_width=2.0 * fine.h)

    oracle = oracle_residual(state.u, data, fine)
    gap = oracle_gap(state.r, oracle, data.beta)
    indicator = (
        aposteriori_indicator(report.dual_norm, gap, constants.mu) if constants.mu > 0 else np.nan
    )
    best = best_approximation(exact, mesh, spec.p)

    mass = mass_matrix_U(mesh, spec.p)
    u_norm = float(np.sqrt(state.u.coeffs @ mass @ state.u.coeffs))
    f_dual = minimize_residual(TrialFunction.zeros(mesh, spec.p), data, spec.inner_config()).dual_norm
    gram_condition = (
        condition_number(gram_matrix_V(state.r.breakpoints, state.r.include_constant, data.beta, data.domain))
        if state.r.M else 1.0
    )
    quasi_optimality = constants.quasi_optimality
    return {
        **asdict(report),
        'mu': constants.mu,
        'cb': constants.cb,
        'omega': constants.omega,
        'delta_star': constants.delta_star,
        'rho': state.rho,
        'iters': state.k,
        'converged': int(state.converged),
        'stop_reason': state.stop_reason,
        'gram_condition': gram_condition,
        'seed': spec.seed,
        'oracle_dual_norm': oracle.vnorm,
        'oracle_gap': gap,
        'aposteriori_indicator': indicator,
        'best_approximation_error': l2_error(best, exact),
        'quasi_optimality': quasi_optimality,
        'apriori_factor': 1.0 + 2.0 * quasi_optimality,
        'u_norm': u_norm,
        'f_dual_norm': f_dual,
        'stability_bound': 2.0 / constants.mu * f_dual if constants.mu > 0 else np.nan,
        'largest_kink': largest_kink(state.r),
    }


def run_case(spec):
    """Run one Uzawa solve and write solution, residual, history and report tables"""
    start = time.perf_counter()
    data = spec.problem_data()
    mesh = spec.mesh()
    logger.info(f"Running {spec.case_id} with N={spec.N}, M={spec.M}, p={spec.p}")

    fine = FineTestSpace(mesh, spec.p, data, spec.refinement)
    constants = operator_constants(mesh, spec.p, fine, spec.rho)
    state = run_uzawa(data, mesh, spec.p, spec.uzawa_config(constants.rho))
    report = _case_report(spec, state, constants, data, fine)
    wall_seconds = time.perf_counter() - start

    out = spec.output_path()
    x = np.linspace(data.domain.a, data.domain.b, settings.MINRES['SAMPLE_POINTS'])
    exact = reference_solution(data)
    solution = pd.DataFrame({'x': x, 'u_h': state.u(x), 'u_exact': exact(x)})
    residual = pd.DataFrame({
        'x': x,
        'r_n': state.r.values(x),
        'residual_expr': -data.beta * state.r.derivative(x) + data.gamma * state.r.values(x),
    })
    history = pd.DataFrame([asdict(entry) for entry in state.history], columns=HISTORY_COLUMNS)

    paths = [out / 'solution.csv', out / 'residual.csv', out / 'history.csv', out / 'report.csv']
    write_csv(solution, paths[0])
    write_csv(residual, paths[1])
    write_csv(history, paths[2])
    write_csv(pd.DataFrame([report]), paths[3])
    if spec.svg:
        paths.append(out / 'plots.svg')
        plotting.case_plot(solution, residual, paths[-1], f"{spec.case_id}: N={spec.N}, M={spec.M}")

    logger.info(
        f"{spec.case_id} N={spec.N} M={spec.M}: l2_error_u={report['l2_error_u']:.6e} "
        f"dual_norm={report['dual_norm']:.6e} iters={report['iters']}"
    )
    return CaseResult(spec, state, constants, report, wall_seconds, paths)


def run_preset(spec):
    """Run every figure configuration of a case, each in its own subdirectory"""
    if spec.case_id not in FIGURE_CONFIGS:
        raise InvalidArgumentError(f"No figure preset for {spec.case_id}")
    return [
        run_case(replace(spec, N=N, M=M, out_dir=str(Path(spec.out_dir) / f"N{N}_M{M}")))
        for N, M in FIGURE_CONFIGS[spec.case_id]
    ]


def study_row(result, record_timings):
    return {
        'N': result.spec.N,
        'M': result.spec.M,
        'dofs_u': result.report['dofs_u'],
        'l2_error_u': result.report['l2_error_u'],
        'residual_expr_error': result.report['residual_expr_error'],
        'dual_norm': result.report['dual_norm'],
        'iters': result.report['iters'],
        'wall_seconds': result.wall_seconds if record_timings else 0.0,
    }


def failure_row(spec):
    return {
        'N': spec.N, 'M': spec.M, 'dofs_u': spec.N * (spec.p + 1),
        'l2_error_u': np.nan, 'residual_expr_error': np.nan, 'dual_norm': np.nan,
        'iters': -1, 'wall_seconds': 0.0,
    }


@dataclass(frozen=True)
class StudySpec:
    case: CaseSpec = field(default_factory=CaseSpec)
    N_list: tuple = (1, 2, 4, 8)
    M_rule: str = '2N'
    beta_list: tuple = ()
    record_timings: bool = None
    evals_per_knot: int = None  # budget rule for large M; 0 turns it off

    def __post_init__(self):
        if not self.N_list:
            raise InvalidArgumentError("A study needs at least one N")
        if any(n < 1 for n in self.N_list) or np.any(np.diff(self.N_list) <= 0):
            raise InvalidArgumentError(f"N list must be positive and increasing, got {self.N_list}")
        if self.M_rule not in M_RULES:
            raise InvalidArgumentError(f"M rule must be one of {M_RULES}, got {self.M_rule!r}")
        if self.beta_list and self.case.case_id not in ('case1', 'custom'):
            raise InvalidArgumentError("beta sweeps are only available for case1 and custom cases")
        if self.record_timings is None:
            object.__setattr__(self, 'record_timings', settings.MINRES['RECORD_TIMINGS'])
        if self.evals_per_knot is None:
            object.__setattr__(self, 'evals_per_knot', settings.MINRES['STUDY_EVALS_PER_KNOT'])
        if self.evals_per_knot < 0:
            raise InvalidArgumentError(f"evals_per_knot must be >= 0, got {self.evals_per_knot}")

    def M_for(self, N):
        if self.M_rule == 'fixed':
            return self.case.M
        return {'N': 1, '2N': 2, '4N': 4}[self.M_rule] * N

    def budget_overrides(self, M):
        """Case overrides of the study budget rule.

        Each residual solve gets evals_per_knot * M simplex evaluations and, once a
        warm start exists, no cold restarts. An explicit max_evals on the case is kept.
        """
        if self.evals_per_knot == 0:
            return {}
        overrides = {'cold_restarts': False}
        if self.case.max_evals is None:
            overrides['max_evals'] = max(self.evals_per_knot * M, 4 * (M + 1))
        return overrides

    def case_specs(self, out_dir, beta=None):
        specs = []
        for N in self.N_list:
            M = self.M_for(N)
            overrides = {'N': N, 'M': M, 'out_dir': str(Path(out_dir) / f"N{N}_M{M}")}
            overrides.update(self.budget_overrides(M))
            if beta is not None:
                overrides['beta'] = beta
            specs.append(replace(self.case, **overrides))
        return specs


def _run_sweep(spec, out_dir, beta=None):
    from .tasks import run_case_task

    cases = spec.case_specs(out_dir, beta)
    job = group(run_case_task.s(case.as_dict(), spec.record_timings) for case in cases)
    rows = job.apply_async().get()
    table = pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(table, out / 'convergence.csv')
    if spec.case.svg:
        title = spec.case.case_id if beta is None else f"{spec.case.case_id}, beta={beta:g}"
        plotting.convergence_plot(table, out / 'convergence.svg', title)
    failed = int((table['iters'] < 0).sum())
    if failed:
        logger.warning(f"{failed} of {len(cases)} study cases failed; see their diagnostics.txt")
    return table


def run_study(spec):
    """Convergence tables keyed by beta (None when no sweep was requested)"""
    out_dir = spec.case.out_dir
    if not spec.beta_list:
        return {None: _run_sweep(spec, out_dir)}
    return {
        beta: _run_sweep(spec, str(Path(out_dir) / f"beta_{beta:g}"), beta)
        for beta in spec.beta_list
    }


def constants_row(spec):
    data = spec.problem_data()
    mesh = spec.mesh()
    fine = FineTestSpace(mesh, spec.p, data, spec.refinement)
    constants = operator_constants(mesh, spec.p, fine, spec.rho)
    return {
        'mu': constants.mu,
        'cb': constants.cb,
        'omega': constants.omega,
        'delta_star': constants.delta_star,
    }


ANGLE_BOUNDS = (0.0, 2.0 * np.pi)
OFFSET_BOUND = np.sqrt(2.0)
REGIONS = ('full', 'left', 'right')
# A few plane ReLUs reproduce f exactly on the collocation grid, so restarted
# fits reach round-off; a 2D fit above this relative error is reported
EXACT_FIT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TwoDDemoSpec:
    n: int = 8
    nx: int = 32
    ny: int = 32
    max_evals: int = 4000
    restarts: int = 2
    region: str = 'full'
    grid_angles: int = 24
    grid_offsets: int = 17
    penalty: float = 1.0  # weight of r(x, 1) = 0 against the interior misfit
    out_dir: str = None
    svg: bool = True

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError(f"Need at least one neuron, got {self.n}")
        if self.nx < 8 or self.ny < 8:
            raise InvalidArgumentError(f"Collocation grid must be at least 8x8, got {self.nx}x{self.ny}")
        if self.region not in REGIONS:
            raise InvalidArgumentError(f"region must be one of {REGIONS}, got {self.region!r}")
        if self.out_dir is None:
            object.__setattr__(self, 'out_dir', settings.MINRES['OUTPUT_DIR'])

    @classmethod
    def from_options(cls, options):
        names = {'out': 'out_dir'}
        fields = set(cls.__dataclass_fields__)
        kwargs = {}
        for key, value in options.items():
            name = names.get(key, key)
            if value is not None and name in fields:
                kwargs[name] = value
        return cls(**kwargs)


def demo_target(x, y):
    """Closed-form residual: 0.5 (1 - y) right of x = 0.5, 0.5 (y - 1) left of it"""
    return np.where(x > 0.5, 0.5 * (1.0 - y), 0.5 * (y - 1.0))


def demo_target_dy(x):
    """u_h - u with u_h = 0.5 and u the indicator of x > 0.5"""
    return np.where(x > 0.5, -0.5, 0.5)


class PlaneReluFit:
    """Least-squares fit of c0 + sum_i c_i ReLU(cos t_i x + sin t_i y + d_i).

    Only beta . grad r = dr/dy enters the interior misfit, so the outflow
    condition r(x, 1) = 0 is added as a penalty to fix the x-dependent part.
    """

    def __init__(self, spec):
        self.spec = spec
        xs = (np.arange(spec.nx) + 0.5) / spec.nx
        ys = (np.arange(spec.ny) + 0.5) / spec.ny
        X, Y = np.meshgrid(xs, ys)
        self.grid_x, self.grid_y = X.ravel(), Y.ravel()
        mask = {
            'full': np.ones_like(self.grid_x, dtype=bool),
            'left': self.grid_x <= 0.5,
            'right': self.grid_x > 0.5,
        }[spec.region]
        self.x, self.y = self.grid_x[mask], self.grid_y[mask]
        top_mask = {'full': xs == xs, 'left': xs <= 0.5, 'right': xs > 0.5}[spec.region]
        self.top_x = xs[top_mask]
        self.target_dy = demo_target_dy(self.x)

    @staticmethod
    def split(params):
        n = len(params) // 2
        return params[:n], params[n:]

    @classmethod
    def features(cls, params, x, y):
        """(values, y-derivatives) of [1, ReLU(...)] at the given points"""
        angles, offsets = cls.split(np.asarray(params, dtype=float))
        z = np.cos(angles)[None, :] * x[:, None] + np.sin(angles)[None, :] * y[:, None] + offsets[None, :]
        ones = np.ones((len(x), 1))
        values = np.hstack((ones, np.maximum(z, 0.0)))
        slopes = np.hstack((0.0 * ones, np.sin(angles)[None, :] * (z > 0)))
        return values, slopes

    def system(self, params):
        _, interior = self.features(params, self.x, self.y)
        top, _ = self.features(params, self.top_x, np.ones_like(self.top_x))
        matrix = np.vstack((
            interior / np.sqrt(len(self.x)),
            np.sqrt(self.spec.penalty) * top / np.sqrt(len(self.top_x)),
        ))
        rhs = np.concatenate((self.target_dy / np.sqrt(len(self.x)), np.zeros(len(self.top_x))))
        return matrix, rhs

    def solve(self, params):
        matrix, rhs = self.system(params)
        coeffs, *_ = np.linalg.lstsq(matrix, rhs, rcond=None)
        return coeffs, 0.5 * float(np.sum((matrix @ coeffs - rhs) ** 2))

    def loss(self, params):
        return self.solve(params)[1]

    def evaluate(self, params, coeffs, x, y):
        values, slopes = self.features(params, x, y)
        return values @ coeffs, slopes @ coeffs

    def grid_search(self):
        """Greedy neuron-by-neuron scan over an angle/offset grid"""
        angles = np.linspace(*ANGLE_BOUNDS, self.spec.grid_angles, endpoint=False)
        offsets = np.linspace(-OFFSET_BOUND, OFFSET_BOUND, self.spec.grid_offsets)
        chosen_angles, chosen_offsets = [], []
        best_loss = np.inf
        for _ in range(self.spec.n):
            best = None
            for angle in angles:
                for offset in offsets:
                    params = np.array(chosen_angles + [angle] + chosen_offsets + [offset])
                    loss = self.loss(params)
                    if best is None or loss < best[0]:
                        best = (loss, angle, offset)
            best_loss, angle, offset = best
            chosen_angles.append(angle)
            chosen_offsets.append(offset)
        return np.array(chosen_angles + chosen_offsets), best_loss


def run_2d_demo(spec):
    """Fit the shallow 2D ReLU residual and write residual2d.csv and fit_report.csv"""
    fit = PlaneReluFit(spec)
    start, grid_loss = fit.grid_search()
    logger.info(f"2D grid search: n={spec.n} loss={grid_loss:.6e}")

    objective = BoundedObjective(
        fit.loss,
        np.concatenate((np.full(spec.n, ANGLE_BOUNDS[0]), np.full(spec.n, -OFFSET_BOUND))),
        np.concatenate((np.full(spec.n, ANGLE_BOUNDS[1]), np.full(spec.n, OFFSET_BOUND))),
    )
    result = minimize_bounded(
        objective, start, SimplexOptions(max_evals=spec.max_evals, restarts=spec.restarts)
    )
    params = result.x
    coeffs, loss = fit.solve(params)
    if not result.converged:
        logger.warning("2D fit stopped on its evaluation budget; reporting the best point found")

    r_fit, dy_fit = fit.evaluate(params, coeffs, fit.x, fit.y)
    target = demo_target(fit.x, fit.y)
    u_minus_uh = -fit.target_dy
    report = {
        'n': spec.n,
        'nx': spec.nx,
        'ny': spec.ny,
        'region': spec.region,
        'objective': float(np.mean(0.5 * dy_fit ** 2 + u_minus_uh * dy_fit)),
        'fit_loss': loss,
        'grid_search_loss': grid_loss,
        'rel_error_r': float(np.linalg.norm(r_fit - target) / np.linalg.norm(target)),
        'rel_error_dy': float(np.linalg.norm(dy_fit - fit.target_dy) / np.linalg.norm(fit.target_dy)),
        'evals': result.evals,
        'converged': int(result.converged),
        'restarts_used': result.restarts_used,
    }

    r_grid, dy_grid = fit.evaluate(params, coeffs, fit.grid_x, fit.grid_y)
    grid = pd.DataFrame({
        'x': fit.grid_x,
        'y': fit.grid_y,
        'f': demo_target(fit.grid_x, fit.grid_y),
        'r': r_grid,
        'r_y': dy_grid,
    })
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / 'residual2d.csv', out / 'fit_report.csv']
    write_csv(grid, paths[0])
    write_csv(pd.DataFrame([report]), paths[1])
    if spec.svg:
        paths.append(out / 'residual2d.svg')
        plotting.demo2d_plot(grid, paths[-1])
    if report['rel_error_r'] > EXACT_FIT_TOLERANCE:
        logger.warning(f"2D fit missed the exact residual: rel_error_r={report['rel_error_r']:.3e}")
    logger.info(f"2D fit: n={spec.n} rel_error_r={report['rel_error_r']:.6e}")
    return report, paths
