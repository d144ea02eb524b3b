import json
import sys
import tempfile
from io import StringIO
from pathlib import Path
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

import manage
from ensembles.exceptions import EnumerationLimitError, SolverError, VerificationFailure
from experiments.management.commands._base import EXIT_CONFIG, EXIT_MISSING_OUTPUT, exit_code_for
from experiments.models import ExperimentRun

EQUILIBRIUM_TOML = """\
[model]
preset = "krawtchouk"
parameters = { m = 2.0 }

[run]
N = [50]

[equilibrium]
grid_size = 2000
"""


class CommandTestCase(TestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = Path(tmp.name)

    def call(self, name, **options):
        stdout = StringIO()
        call_command(name, stdout=stdout, **options)
        return stdout.getvalue()


class VerifyNekrasovCommandTests(CommandTestCase):

    def test_small_ensembles_pass(self):
        output = self.call('verify_nekrasov', preset='krawtchouk', N='1,2', out=str(self.out))
        self.assertIn('Done', output)
        report = json.loads((self.out / 'verify_nekrasov' / 'report.json').read_text(encoding='utf-8'))
        self.assertEqual([entry['N'] for entry in report['results']], [1, 2])
        self.assertTrue(all(entry['passed'] for entry in report['results']))
        self.assertEqual(ExperimentRun.objects.get().command, 'verify_nekrasov')

    def test_unknown_preset_is_a_configuration_error(self):
        with self.assertRaises(CommandError) as cm:
            self.call('verify_nekrasov', preset='gaussian', N='2', out=str(self.out))
        self.assertEqual(cm.exception.returncode, EXIT_CONFIG)


class EquilibriumCommandTests(CommandTestCase):

    def test_density_and_plot_export(self):
        config = self.out / 'experiment.toml'
        config.write_text(EQUILIBRIUM_TOML, encoding='utf-8')
        self.call('equilibrium', config=str(config), out=str(self.out))
        report = json.loads((self.out / 'equilibrium' / 'band_report.json').read_text(encoding='utf-8'))
        self.assertLess(report['reference_band_sup_error'], 1e-3)
        self.assertTrue((self.out / 'equilibrium' / 'density.csv').exists())

        output = self.call('export_plot_data', out=str(self.out))
        self.assertIn('1 plot file', output)
        self.assertTrue((self.out / 'plot' / 'density.csv').exists())


class ExportCommandTests(CommandTestCase):

    def test_empty_directory(self):
        with self.assertRaises(CommandError) as cm:
            self.call('export_plot_data', out=str(self.out))
        self.assertEqual(cm.exception.returncode, EXIT_MISSING_OUTPUT)


class RunsCommandTests(CommandTestCase):

    def test_empty_ledger(self):
        self.assertIn('No runs recorded.', self.call('runs'))

    def test_lists_runs(self):
        ExperimentRun.objects.create(command='clt', preset='krawtchouk', config_digest='0' * 64, out_dir='out')
        output = self.call('runs', limit=5)
        self.assertIn('clt', output)
        self.assertIn('krawtchouk', output)


class ExitCodeTests(TestCase):

    def test_mapping(self):
        self.assertEqual(exit_code_for(VerificationFailure('x')), 1)
        self.assertEqual(exit_code_for(SolverError('x')), 4)
        self.assertEqual(exit_code_for(EnumerationLimitError(10**9, 10**8)), 5)
        self.assertEqual(exit_code_for(FileNotFoundError('x')), 3)
        self.assertIsNone(exit_code_for(KeyError('x')))


class EntryPointTests(SimpleTestCase):

    def test_hyphenated_stage_names(self):
        with mock.patch.object(sys, 'argv', ['manage.py', 'verify-nekrasov', '--N', '1']), \
                mock.patch('django.core.management.execute_from_command_line') as execute:
            manage.main()
        execute.assert_called_once_with(['manage.py', 'verify_nekrasov', '--N', '1'])
