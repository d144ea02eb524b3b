"""
Stage outputs: CSV with a header row and JSON reports, both written atomically (temp file + rename).
Floats are printed with 17 significant digits.
"""
import csv
import io
import json
import logging
import os
import platform
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np

from ensembles.exceptions import MissingStageOutput
from ensembles.mcmc import RNG_IDENTITY

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
VERSIONED_PACKAGES = ('dbeta', 'numpy', 'scipy', 'django', 'celery')


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f'{float(value):.17g}'
    return str(value)


def _plain(value):
    """numpy scalars and arrays to JSON-native values; complex as [re, im]."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return [float(np.real(value)), float(np.imag(value))]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_csv(path, header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        writer.writerow([format_value(v) for v in row])
    return _atomic_write(path, buffer.getvalue())


def write_json(path, payload):
    text = json.dumps(_plain(payload), indent=2, sort_keys=True, ensure_ascii=False) + '\n'
    return _atomic_write(path, text)


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise MissingStageOutput(f"missing stage output {path}")
    with path.open(encoding='utf-8', newline='') as handle:
        return list(csv.DictReader(handle))


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingStageOutput(f"missing stage output {path}")
    return json.loads(path.read_text(encoding='utf-8'))


def package_versions():
    versions = {'python': platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


def write_manifest(out_dir, config, stages):
    """Config echo, package versions and RNG identity; re-reading it as a config reproduces the run."""
    return write_json(Path(out_dir) / MANIFEST_NAME, {
        'config': config.as_dict(),
        'config_digest': config.digest(),
        'versions': package_versions(),
        'rng': RNG_IDENTITY,
        'stages': list(stages),
    })


class StageOutput:
    """Files of one stage under <out>/<stage>/."""

    def __init__(self, out_dir, stage):
        self.root = Path(out_dir)
        self.stage = stage
        self.directory = self.root / stage

    def path(self, name):
        return self.directory / name

    def exists(self, name):
        return self.path(name).exists()

    def csv(self, name, header, rows):
        return write_csv(self.path(name), header, rows)

    def json(self, name, payload):
        return write_json(self.path(name), payload)

    def read_csv(self, name):
        return read_csv(self.path(name))

    def read_json(self, name):
        return read_json(self.path(name))
