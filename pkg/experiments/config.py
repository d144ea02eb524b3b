"""
Experiment configuration: TOML files (or manifests) validated section by section.

Errors are reported as `path:line: section.key: message`, the line found by scanning the
TOML text for the section header and the key below it.
"""
import hashlib
import json
import logging
import re
import tomllib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from django.conf import settings

from ensembles.exceptions import ConfigurationError
from ensembles.weights import ModelPreset, build

from .forms import SECTION_FORMS

logger = logging.getLogger(__name__)

DEFAULT_CHAIN = {'burn_in': None, 'samples': 2000, 'thinning': 1, 'chains': 1}
DEFAULT_ANALYSIS = {
    'nekrasov_verify': False, 'equilibrium': False, 'covariance': False,
    'clt': False, 'lln': False, 'tails': False,
}
DEFAULT_GRID_SIZE = 2000
DEFAULT_PARAMETERS = {'krawtchouk': {'m': 2.0}}


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    N: tuple
    theta: float = 1.0
    parameters: dict = field(default_factory=dict)
    fillings: tuple = None
    seed: int = 0
    threads: int = 1
    out: str = 'out'
    chain: dict = field(default_factory=lambda: dict(DEFAULT_CHAIN))
    polynomials: tuple = ()
    points: tuple = ()
    analysis: dict = field(default_factory=lambda: dict(DEFAULT_ANALYSIS))
    grid_size: int = DEFAULT_GRID_SIZE
    radii: tuple = ()

    @property
    def model_preset(self):
        parameters = dict(self.parameters)
        if self.fillings is not None:
            parameters['fillings'] = list(self.fillings)
        return ModelPreset(name=self.preset, parameters=parameters, theta=self.theta)

    @property
    def complex_points(self):
        return tuple(complex(re_, im) for re_, im in self.points)

    @property
    def out_dir(self):
        return Path(self.out)

    def as_dict(self):
        data = asdict(self)
        data['N'] = list(self.N)
        data['fillings'] = list(self.fillings) if self.fillings is not None else None
        data['polynomials'] = [list(p) for p in self.polynomials]
        data['points'] = [list(z) for z in self.points]
        data['radii'] = list(self.radii)
        return data

    def to_sections(self):
        """The inverse of from_sections; used when a manifest is read back."""
        model = {'preset': self.preset, 'theta': self.theta, 'parameters': dict(self.parameters)}
        if self.fillings is not None:
            model['fillings'] = list(self.fillings)
        run = {'N': list(self.N), 'seed': self.seed, 'threads': self.threads, 'out': self.out}
        return {
            'model': model,
            'run': run,
            'chain': {k: v for k, v in self.chain.items() if v is not None},
            'observables': {'polynomials': [list(p) for p in self.polynomials], 'points': [list(z) for z in self.points]},
            'analysis': dict(self.analysis),
            'equilibrium': {'grid_size': self.grid_size},
            'tails': {'radii': list(self.radii)},
        }

    def digest(self):
        return _sha256(self.as_dict())

    def sample_digest(self):
        """Digest of the fields that determine the sampled chains; N, threads and analysis are left out."""
        data = self.as_dict()
        return _sha256({key: data[key] for key in ('preset', 'theta', 'parameters', 'fillings', 'seed', 'chain')})

    def with_overrides(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self


def _sha256(data):
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _line_of(text, section, key=None):
    """1-based line of `key` in `[section]` (or of the header), 0 when unknown."""
    if not text:
        return 0
    lines = text.splitlines()
    header = re.compile(r'^\s*\[\s*' + re.escape(section) + r'\s*\]\s*(#.*)?$')
    start = None
    for i, line in enumerate(lines):
        if header.match(line):
            start = i
            break
    if start is None:
        return 0
    if key is None or key == '__all__':
        return start + 1
    key_re = re.compile(r'^\s*' + re.escape(key) + r'\s*=')
    for i in range(start + 1, len(lines)):
        if re.match(r'^\s*\[', lines[i]) and not re.match(r'^\s*\[\s*' + re.escape(section) + r'\.', lines[i]):
            break
        if key_re.match(lines[i]):
            return i + 1
    return start + 1


def _error(source, text, section, key, message):
    line = _line_of(text, section, key)
    where = f"{section}.{key}" if key and key != '__all__' else section
    return f"{source}:{line}: {where}: {message}"


def from_sections(data, source='<config>', text=None):
    """Validate the parsed sections and build an ExperimentConfig; all errors are reported together."""
    errors = []
    unknown = sorted(set(data) - set(SECTION_FORMS))
    for section in unknown:
        errors.append(_error(source, text, section, None, 'unknown section'))
    cleaned = {}
    for section, form_class in SECTION_FORMS.items():
        values = data.get(section, {})
        if not isinstance(values, dict):
            errors.append(_error(source, text, section, None, 'must be a table'))
            continue
        form = form_class(data=values)
        extra = sorted(set(values) - set(form.fields))
        for key in extra:
            errors.append(_error(source, text, section, key, 'unknown key'))
        if not form.is_valid():
            for key, messages in form.errors.items():
                for message in messages:
                    errors.append(_error(source, text, section, key, message))
            continue
        cleaned[section] = form.cleaned_data
    if errors:
        raise ConfigurationError('\n'.join(errors))

    model, run = cleaned['model'], cleaned['run']
    chain = dict(DEFAULT_CHAIN)
    chain.update({k: v for k, v in cleaned['chain'].items() if v is not None})
    analysis = {k: bool(cleaned['analysis'].get(k, v)) for k, v in DEFAULT_ANALYSIS.items()}
    config = ExperimentConfig(
        preset=model['preset'],
        theta=model['theta'],
        parameters={**DEFAULT_PARAMETERS.get(model['preset'], {}), **model['parameters']},
        fillings=tuple(model['fillings']) if model['fillings'] is not None else None,
        N=tuple(run['N']),
        seed=run['seed'] if run['seed'] is not None else 0,
        threads=run['threads'] or settings.DBETA_THREADS,
        out=run['out'] or settings.DBETA_OUT_DIR,
        chain=chain,
        polynomials=tuple(tuple(p) for p in cleaned['observables']['polynomials']),
        points=tuple(tuple(z) for z in cleaned['observables']['points']),
        analysis=analysis,
        grid_size=cleaned['equilibrium']['grid_size'] or DEFAULT_GRID_SIZE,
        radii=tuple(cleaned['tails']['radii']),
    )
    # preset parameters are validated by building the model at the smallest N
    try:
        build(config.model_preset, config.N[0])
    except ConfigurationError as e:
        raise ConfigurationError(_error(source, text, 'model', 'parameters', str(e))) from e
    return config


def load_config(path):
    """Read a TOML experiment file or a manifest JSON written by a previous run."""
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    if path.suffix == '.json':
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}:{e.lineno}: invalid JSON: {e.msg}") from e
        if 'config' not in payload:
            raise ConfigurationError(f"{path}:1: manifest has no 'config' entry")
        logger.info(f"Re-running manifest {path}")
        return from_config_dict(payload['config'], source=str(path))
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: {e}") from e
    return from_sections(data, source=str(path), text=text)


def from_config_dict(data, source='<manifest>'):
    """Rebuild a config from ExperimentConfig.as_dict output."""
    try:
        base = ExperimentConfig(
            preset=data['preset'], N=tuple(data['N']), theta=data.get('theta', 1.0),
            parameters=data.get('parameters') or {},
            fillings=tuple(data['fillings']) if data.get('fillings') is not None else None,
            seed=data.get('seed', 0), threads=data.get('threads', 1), out=data.get('out', 'out'),
            chain=data.get('chain') or dict(DEFAULT_CHAIN),
            polynomials=tuple(tuple(p) for p in data.get('polynomials', ())),
            points=tuple(tuple(z) for z in data.get('points', ())),
            analysis=data.get('analysis') or dict(DEFAULT_ANALYSIS),
            grid_size=data.get('grid_size', DEFAULT_GRID_SIZE),
            radii=tuple(data.get('radii', ())),
        )
    except (KeyError, TypeError) as e:
        raise ConfigurationError(f"{source}:1: config: malformed manifest entry ({e})") from e
    return from_sections(base.to_sections(), source=source)


def parse_param(item):
    """`key=value` with value parsed as TOML (numbers, lists, strings); bare words stay strings."""
    key, sep, raw = item.partition('=')
    if not sep or not key.strip():
        raise ConfigurationError(f"--param expects key=value, got {item!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")['v']
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.strip(), value


def config_from_options(options):
    """Config from --config plus command-line overrides; without --config, --preset and --N are required."""
    path = options.get('config')
    if path:
        config = load_config(path)
        sections = config.to_sections()
    else:
        if not options.get('preset'):
            raise ConfigurationError('either --config or --preset is required')
        sections = {'model': {'preset': options['preset']}, 'run': {'N': [1]}}

    model, run = sections.setdefault('model', {}), sections.setdefault('run', {})
    if options.get('preset'):
        if options['preset'] != model.get('preset'):
            model['parameters'] = {}
        model['preset'] = options['preset']
    if options.get('theta') is not None:
        model['theta'] = options['theta']
    parameters = model.setdefault('parameters', {})
    if options.get('m') is not None:
        parameters['m'] = options['m']
    for item in options.get('param') or ():
        key, value = parse_param(item)
        parameters[key] = value
    if options.get('N'):
        try:
            run['N'] = [int(n) for n in str(options['N']).split(',') if n.strip()]
        except ValueError as e:
            raise ConfigurationError(f"--N expects a comma list of integers, got {options['N']!r}") from e
    for key in ('seed', 'threads', 'out'):
        if options.get(key) is not None:
            run[key] = options[key]
    if run.get('threads') is None:
        run['threads'] = settings.DBETA_THREADS
    if run.get('out') is None:
        run['out'] = settings.DBETA_OUT_DIR
    chain = sections.setdefault('chain', {})
    for key in ('samples', 'burn_in', 'thinning', 'chains'):
        if options.get(key) is not None:
            chain[key] = options[key]
    return from_sections(sections, source=path or '<command line>')
