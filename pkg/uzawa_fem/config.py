"""Command-line options and `--config` files.

Config files hold `key=value` lines with `#` comments; keys are the option
names without the leading dashes. An explicit flag wins over the file, which
wins over the MINRES settings defaults.
"""
from dataclasses import dataclass
import logging

from dotenv import dotenv_values

from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)


def on_off(value):
    text = str(value).strip().lower()
    if text in ('on', 'true', 'yes', '1'):
        return True
    if text in ('off', 'false', 'no', '0'):
        return False
    raise InvalidArgumentError(f"Expected on/off, got {value!r}")


def int_list(value):
    try:
        return [int(item) for item in str(value).split(',') if item.strip()]
    except ValueError as e:
        raise InvalidArgumentError(f"Expected a comma-separated list of integers, got {value!r}") from e


def float_list(value):
    try:
        return [float(item) for item in str(value).split(',') if item.strip()]
    except ValueError as e:
        raise InvalidArgumentError(f"Expected a comma-separated list of numbers, got {value!r}") from e


@dataclass(frozen=True)
class Option:
    name: str
    type: object
    help: str
    choices: tuple = None

    @property
    def flag(self):
        return f"--{self.name}"

    @property
    def dest(self):
        return self.name.replace('-', '_')

    def convert(self, raw):
        try:
            value = self.type(raw)
        except (TypeError, ValueError) as e:
            raise InvalidArgumentError(f"Invalid value {raw!r} for {self.name}: {e}") from e
        if self.choices is not None and value not in self.choices:
            raise InvalidArgumentError(f"{self.name} must be one of {self.choices}, got {value!r}")
        return value


CASE_IDS = ('case1', 'case2', 'case3', 'custom')

SOLVER_OPTIONS = (
    Option('case', str, 'Experiment case', CASE_IDS),
    Option('N', int, 'Number of mesh elements'),
    Option('M', int, 'Number of ReLU breakpoints'),
    Option('p', int, 'Trial polynomial degree'),
    Option('beta', float, 'Advection speed (case1/custom only)'),
    Option('gamma', float, 'Reaction coefficient (custom only)'),
    Option('source', str, 'Source for custom cases: dirac:X, constant:V or piecewise:B1,B2;V1,V2,V3'),
    Option('u-in', float, 'Inflow value (custom only)'),
    Option('rho', float, 'Uzawa relaxation parameter (default 1/C_b^2)'),
    Option('eps', float, 'Step tolerance'),
    Option('max-iters', int, 'Maximum Uzawa iterations'),
    Option('mode', str, 'Residual optimisation mode', ('varpro', 'joint')),
    Option('multistart', int, 'Residual starts per iteration'),
    Option('cold-restarts', on_off, 'Keep the cold starts once a warm start exists (on/off)'),
    Option('max-evals', int, 'Simplex evaluation budget per start'),
    Option('seed', int, 'Random seed'),
    Option('refinement', int, 'Fine test space refinement factor'),
    Option('with-constant', on_off, 'Include the constant network term (on/off)'),
    Option('out', str, 'Output directory'),
    Option('svg', on_off, 'Write SVG plots (on/off)'),
)

CASE_OPTIONS = SOLVER_OPTIONS + (
    Option('preset', str, 'Run the figure configurations of the case', ('figure',)),
)

STUDY_OPTIONS = SOLVER_OPTIONS + (
    Option('N-list', int_list, 'Comma-separated element counts'),
    Option('M-rule', str, 'Breakpoints per study entry', ('N', '2N', '4N', 'fixed')),
    Option('beta-list', float_list, 'Comma-separated advection speeds to sweep'),
    Option('timings', on_off, 'Record wall-clock seconds (on/off)'),
    Option('evals-per-knot', int, 'Study simplex budget per breakpoint (0 keeps the case settings)'),
)

CONSTANTS_OPTIONS = (
    Option('case', str, 'Experiment case', CASE_IDS),
    Option('N', int, 'Number of mesh elements'),
    Option('p', int, 'Trial polynomial degree'),
    Option('beta', float, 'Advection speed (case1/custom only)'),
    Option('gamma', float, 'Reaction coefficient (custom only)'),
    Option('source', str, 'Source for custom cases'),
    Option('rho', float, 'Uzawa relaxation parameter (default 1/C_b^2)'),
    Option('refinement', int, 'Fine test space refinement factor'),
)

DEMO_OPTIONS = (
    Option('n', int, 'Number of neurons'),
    Option('nx', int, 'Collocation points in x'),
    Option('ny', int, 'Collocation points in y'),
    Option('max-evals', int, 'Simplex evaluation budget'),
    Option('restarts', int, 'Simplex restarts'),
    Option('region', str, 'Collocation region', ('full', 'left', 'right')),
    Option('out', str, 'Output directory'),
    Option('svg', on_off, 'Write SVG plots (on/off)'),
)

SUBCOMMAND_OPTIONS = {
    'case': CASE_OPTIONS,
    'study': STUDY_OPTIONS,
    'constants': CONSTANTS_OPTIONS,
    'demo2d': DEMO_OPTIONS,
}


def read_config(path):
    """Raw key/value pairs of a config file"""
    values = dotenv_values(path, encoding='utf-8')
    logger.info(f"Read {len(values)} settings from {path}")
    return values


def merge_config(subcommand, options, path):
    """Fill options the command line left unset from the config file.

    Unknown keys raise InvalidArgumentError.
    """
    known = {option.name: option for option in SUBCOMMAND_OPTIONS[subcommand]}
    merged = dict(options)
    for key, raw in read_config(path).items():
        if key not in known:
            raise InvalidArgumentError(f"Unknown key {key!r} in {path}")
        if raw is None:
            raise InvalidArgumentError(f"Key {key!r} in {path} has no value")
        option = known[key]
        if merged.get(option.dest) is None:
            merged[option.dest] = option.convert(raw)
    return merged
