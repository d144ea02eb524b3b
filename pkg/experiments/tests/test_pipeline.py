import tempfile
from pathlib import Path
from unittest import mock

from django.test import TestCase

from ensembles.exceptions import ConfigurationError
from experiments.config import from_sections
from experiments.models import ExperimentRun
from experiments.pipeline import enabled_stages, run_stages
from experiments.stages import STAGES, StageContext, sample_N
from experiments.tasks import run_pipeline_task


def _config(out, analysis=None, N=(1, 2), chain=None):
    return from_sections({
        'model': {'preset': 'krawtchouk'},
        'run': {'N': list(N), 'out': str(out)},
        'analysis': analysis or {},
        'chain': chain or {},
    })


class StageSelectionTests(TestCase):

    def test_sampling_is_added_for_monte_carlo_stages(self):
        config = _config('out', {'clt': True, 'equilibrium': True})
        self.assertEqual(enabled_stages(config), ['equilibrium', 'sample', 'clt'])

    def test_pipeline_order(self):
        config = _config('out', {'tails': True, 'nekrasov_verify': True, 'covariance': True})
        self.assertEqual(enabled_stages(config), ['verify_nekrasov', 'sample', 'covariance', 'tails'])

    def test_nothing_enabled(self):
        self.assertEqual(enabled_stages(_config('out')), [])


class RunLedgerTests(TestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = Path(tmp.name)

    def test_completed_run(self):
        run, results = run_stages(_config(self.out), ['verify_nekrasov'], 'verify_nekrasov')
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.stages_completed, ['verify_nekrasov'])
        self.assertEqual(run.failed_checks, 0)
        self.assertIsNotNone(run.completed_at)
        self.assertEqual(results[0].failed, [])
        self.assertTrue((self.out / 'verify_nekrasov' / 'report.json').exists())
        self.assertTrue((self.out / 'manifest.json').exists())

    def test_unknown_stage_creates_no_ledger_entry(self):
        with self.assertRaises(ConfigurationError):
            run_stages(_config(self.out), ['plot'], 'pipeline')
        self.assertEqual(ExperimentRun.objects.count(), 0)

    def test_stage_exception_marks_the_run_failed(self):
        def boom(ctx):
            raise RuntimeError('solver exploded')

        with mock.patch.dict(STAGES, {'equilibrium': boom}):
            with self.assertRaises(RuntimeError):
                run_stages(_config(self.out), ['equilibrium'], 'equilibrium')
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'failed')
        self.assertEqual(run.stages_completed, [])
        self.assertIn('solver exploded', run.errors)
        self.assertFalse((self.out / 'manifest.json').exists())


class SampleReuseTests(TestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = Path(tmp.name)
        self.config = _config(self.out, N=(2,), chain={'samples': 50, 'burn_in': 5})
        run_stages(self.config, ['sample'], 'sample')

    def stored_digest(self):
        return StageContext(self.config).output('sample').read_json('N2_diagnostics.json')['sample_digest']

    def samples_with(self, config):
        ctx = StageContext(config)
        with mock.patch('experiments.stages.sample_N', wraps=sample_N) as resample:
            samples = ctx.samples(2)
        return samples, resample

    def test_same_settings_reuse_the_stored_samples(self):
        self.assertEqual(self.stored_digest(), self.config.sample_digest())
        samples, resample = self.samples_with(self.config.with_overrides(threads=2, analysis={'clt': True}))
        resample.assert_not_called()
        self.assertEqual(samples.count, 50)

    def test_new_seed_resamples(self):
        reseeded = self.config.with_overrides(seed=11)
        self.assertNotEqual(reseeded.sample_digest(), self.config.sample_digest())
        _, resample = self.samples_with(reseeded)
        resample.assert_called_once()
        self.assertEqual(self.stored_digest(), reseeded.sample_digest())

    def test_new_preset_parameters_resample(self):
        changed = self.config.with_overrides(parameters={'m': 3.0})
        _, resample = self.samples_with(changed)
        resample.assert_called_once()
        self.assertEqual(self.stored_digest(), changed.sample_digest())

    def test_samples_without_a_digest_are_redrawn(self):
        output = StageContext(self.config).output('sample')
        diagnostics = output.read_json('N2_diagnostics.json')
        del diagnostics['sample_digest']
        output.json('N2_diagnostics.json', diagnostics)
        _, resample = self.samples_with(self.config)
        resample.assert_called_once()


class PipelineTaskTests(TestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.out = Path(tmp.name)

    def test_eager_task(self):
        config = _config(self.out, {'nekrasov_verify': True})
        result = run_pipeline_task.apply(args=(config.as_dict(),)).get()
        self.assertEqual(result['status'], 'completed')
        self.assertEqual(result['stages'], ['verify_nekrasov'])
        self.assertEqual(ExperimentRun.objects.get(pk=result['run_id']).command, 'pipeline')

    def test_configuration_errors_are_not_retried(self):
        payload = _config(self.out).as_dict()
        payload['preset'] = 'gaussian'
        with self.assertRaises(ConfigurationError):
            run_pipeline_task.apply(args=(payload,), throw=True)
