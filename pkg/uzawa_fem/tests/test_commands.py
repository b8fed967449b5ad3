from contextlib import redirect_stderr, redirect_stdout
from io import StringIO
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import mock

import pandas as pd
from django.core.cache import cache
from django.test import SimpleTestCase

from uzawa_fem.cli import main
from uzawa_fem.exceptions import SolverFailure

SMALL_CASE = [
    '--case', 'case2', '--N', '2', '--M', '2', '--p', '0', '--max-iters', '1',
    '--max-evals', '30', '--refinement', '8', '--svg', 'off',
]


class MinresCommandTests(SimpleTestCase):
    def setUp(self):
        cache.clear()

    def run_main(self, *argv):
        stdout, stderr = StringIO(), StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            code = main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()

    def test_case_writes_tables(self):
        with TemporaryDirectory() as tmp:
            code, stdout, _ = self.run_main('case', *SMALL_CASE, '--out', tmp)
            self.assertEqual(code, 0)
            self.assertIn('report.csv', stdout)
            self.assertTrue((Path(tmp) / 'history.csv').exists())

    def test_constants_prints_csv(self):
        code, stdout, _ = self.run_main('constants', '--case', 'case2', '--N', '2', '--p', '0', '--refinement', '8')
        self.assertEqual(code, 0)
        lines = stdout.splitlines()
        self.assertEqual(lines[0], 'mu,cb,omega,delta_star')
        self.assertEqual(len(lines[1].split(',')), 4)

    def test_unknown_flag(self):
        code, _, _ = self.run_main('case', '--bogus', '1')
        self.assertEqual(code, 2)

    def test_invalid_choice(self):
        code, _, _ = self.run_main('case', '--case', 'case9')
        self.assertEqual(code, 2)

    def test_beta_not_allowed_for_point_load_case(self):
        code, _, stderr = self.run_main('case', '--case', 'case2', '--beta', '0.5')
        self.assertEqual(code, 2)
        self.assertIn('beta', stderr)

    def test_unknown_config_key(self):
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / 'minres.cfg'
            path.write_text('# case settings\ncolour=red\n', encoding='utf-8')
            code, _, stderr = self.run_main('case', '--config', str(path))
        self.assertEqual(code, 2)
        self.assertIn('colour', stderr)

    def test_flags_win_over_config(self):
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / 'minres.cfg'
            path.write_text(
                'case=case2\nN=3\nM=2\np=0\nmax-iters=1\nmax-evals=30\nrefinement=8\nsvg=off\n',
                encoding='utf-8',
            )
            code, _, _ = self.run_main('case', '--config', str(path), '--N', '2', '--out', tmp)
            self.assertEqual(code, 0)
            report = pd.read_csv(Path(tmp) / 'report.csv').iloc[0]
        self.assertEqual((report['dofs_u'], report['dofs_r']), (2, 2))

    def test_solver_failure_exits_with_one(self):
        with TemporaryDirectory() as tmp:
            patch = mock.patch(
                'uzawa_fem.management.commands.minres.run_case',
                side_effect=SolverFailure('mass solve failed'),
            )
            with patch:
                code, _, stderr = self.run_main('case', *SMALL_CASE, '--out', tmp)
            self.assertEqual(code, 1)
            self.assertIn('SolverFailure', stderr)
            self.assertTrue((Path(tmp) / 'diagnostics.txt').exists())

    def test_study_reports_rows(self):
        with TemporaryDirectory() as tmp:
            code, stdout, _ = self.run_main('study', *SMALL_CASE, '--N-list', '1,2', '--M-rule', 'N', '--out', tmp)
            self.assertEqual(code, 0)
            self.assertIn('2 rows', stdout)
            self.assertEqual(len(pd.read_csv(Path(tmp) / 'convergence.csv')), 2)

    def test_demo2d(self):
        with TemporaryDirectory() as tmp:
            code, stdout, _ = self.run_main(
                'demo2d', '--n', '1', '--nx', '8', '--ny', '8', '--max-evals', '50',
                '--restarts', '0', '--svg', 'off', '--out', tmp,
            )
            self.assertEqual(code, 0)
            self.assertIn('rel_error_r=', stdout)
            self.assertTrue((Path(tmp) / 'fit_report.csv').exists())
