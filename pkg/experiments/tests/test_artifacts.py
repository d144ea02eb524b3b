import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from ensembles.exceptions import MissingStageOutput
from experiments.artifacts import StageOutput, format_value, read_csv, read_json, write_csv, write_json


class FormatTests(SimpleTestCase):

    def test_seventeen_significant_digits(self):
        self.assertEqual(format_value(0.1), '0.10000000000000001')
        self.assertEqual(format_value(np.float64(2.5)), '2.5')
        self.assertEqual(format_value(float(1 / 3)), '0.33333333333333331')

    def test_integers_and_flags(self):
        self.assertEqual(format_value(7), '7')
        self.assertEqual(format_value(np.int64(-3)), '-3')
        self.assertEqual(format_value(True), 'true')
        self.assertEqual(format_value(np.bool_(False)), 'false')
        self.assertEqual(format_value('band'), 'band')


class WriteTests(SimpleTestCase):

    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)

    def test_csv_with_header(self):
        path = write_csv(self.dir / 'nested' / 'rows.csv', ['N', 'value'], [[3, 0.5], {'N': 4, 'value': 0.25}])
        self.assertEqual(path.read_text(encoding='utf-8'), 'N,value\n3,0.5\n4,0.25\n')
        self.assertEqual(read_csv(path), [{'N': '3', 'value': '0.5'}, {'N': '4', 'value': '0.25'}])

    def test_json_converts_numpy_and_complex(self):
        path = write_json(self.dir / 'report.json', {
            'values': np.arange(3), 'z': 1 + 2j, 'ok': np.bool_(True), 'x': np.float32(0.5),
        })
        self.assertEqual(json.loads(path.read_text(encoding='utf-8')), {
            'values': [0, 1, 2], 'z': [1.0, 2.0], 'ok': True, 'x': 0.5,
        })

    def test_writes_leave_no_temporary_files(self):
        write_json(self.dir / 'a.json', {'a': 1})
        write_json(self.dir / 'a.json', {'a': 2})
        self.assertEqual(sorted(p.name for p in self.dir.iterdir()), ['a.json'])
        self.assertEqual(read_json(self.dir / 'a.json'), {'a': 2})

    def test_missing_outputs(self):
        with self.assertRaises(MissingStageOutput):
            read_csv(self.dir / 'absent.csv')
        with self.assertRaises(MissingStageOutput):
            read_json(self.dir / 'absent.json')

    def test_stage_output_layout(self):
        out = StageOutput(self.dir, 'equilibrium')
        self.assertFalse(out.exists('density.csv'))
        out.csv('density.csv', ['x', 'mu', 'band_label'], [(0.5, 0.25, 'band')])
        self.assertTrue((self.dir / 'equilibrium' / 'density.csv').exists())
        self.assertEqual(out.read_csv('density.csv')[0]['band_label'], 'band')
