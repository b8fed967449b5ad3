import argparse
import logging

import pandas as pd
from django.core.management.base import BaseCommand, CommandError

from ...config import SUBCOMMAND_OPTIONS, merge_config
from ...exceptions import InvalidArgumentError, MinResError
from ...experiments import (
    FLOAT_FORMAT,
    CaseSpec,
    StudySpec,
    TwoDDemoSpec,
    constants_row,
    run_2d_demo,
    run_case,
    run_preset,
    run_study,
    write_diagnostics,
)

logger = logging.getLogger(__name__)

HELP = {
    'case': 'Run one experiment case (or its figure preset)',
    'study': 'Run a convergence study over a list of N',
    'demo2d': 'Fit the 2D ReLU residual demo',
    'constants': 'Print mu, cb, omega and delta_star as CSV',
}


class Command(BaseCommand):
    help = 'Minimal-residual FEM with deep residual Uzawa: cases, studies, 2D demo and constants'

    def add_arguments(self, parser):
        # Plain argparse parsers so usage errors exit with status 2
        subparsers = parser.add_subparsers(
            dest='subcommand', required=True, parser_class=argparse.ArgumentParser
        )
        for name, options in SUBCOMMAND_OPTIONS.items():
            sub = subparsers.add_parser(name, help=HELP[name])
            for option in options:
                sub.add_argument(
                    option.flag, dest=option.dest, type=option.convert,
                    choices=option.choices, default=None, help=option.help,
                )
            sub.add_argument('--config', default=None, help='key=value file with option defaults')

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        known = {option.dest for option in SUBCOMMAND_OPTIONS[subcommand]}
        values = {key: value for key, value in options.items() if key in known}
        try:
            if options.get('config'):
                values = merge_config(subcommand, values, options['config'])
            handler = getattr(self, f"handle_{subcommand}")
        except InvalidArgumentError as e:
            raise CommandError(str(e), returncode=2) from e
        handler(values)

    def _build(self, factory, values):
        try:
            return factory(values)
        except InvalidArgumentError as e:
            raise CommandError(str(e), returncode=2) from e

    def _fail(self, spec, error):
        logger.error(f"Solver failure: {error}")
        path = write_diagnostics(spec.out_dir, spec, error)
        raise CommandError(f"{type(error).__name__}: {error} (diagnostics in {path})", returncode=1)

    def handle_case(self, values):
        spec = self._build(CaseSpec.from_options, values)
        try:
            if values.get('preset'):
                results = run_preset(spec)
            else:
                results = [run_case(spec)]
        except MinResError as e:
            self._fail(spec, e)
        for result in results:
            for path in result.paths:
                self.stdout.write(f"Wrote {path}")

    def handle_study(self, values):
        def factory(values):
            case = CaseSpec.from_options(values)
            kwargs = {'case': case}
            if values.get('N_list') is not None:
                kwargs['N_list'] = tuple(values['N_list'])
            if values.get('M_rule') is not None:
                kwargs['M_rule'] = values['M_rule']
            if values.get('beta_list') is not None:
                kwargs['beta_list'] = tuple(values['beta_list'])
            if values.get('timings') is not None:
                kwargs['record_timings'] = values['timings']
            if values.get('evals_per_knot') is not None:
                kwargs['evals_per_knot'] = values['evals_per_knot']
            return StudySpec(**kwargs)

        spec = self._build(factory, values)
        try:
            tables = run_study(spec)
        except MinResError as e:
            self._fail(spec.case, e)
        for beta, table in tables.items():
            label = '' if beta is None else f" (beta={beta:g})"
            self.stdout.write(f"Study{label}: {len(table)} rows")

    def handle_demo2d(self, values):
        spec = self._build(TwoDDemoSpec.from_options, values)
        try:
            report, paths = run_2d_demo(spec)
        except MinResError as e:
            self._fail(spec, e)
        for path in paths:
            self.stdout.write(f"Wrote {path}")
        self.stdout.write(f"rel_error_r={report['rel_error_r']:.6e}")

    def handle_constants(self, values):
        spec = self._build(CaseSpec.from_options, values)
        try:
            row = constants_row(spec)
        except MinResError as e:
            self._fail(spec, e)
        self.stdout.write(pd.DataFrame([row]).to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator='\n'), ending='')
