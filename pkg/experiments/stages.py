"""
One function per CLI stage. Every stage writes under <out>/<stage>/ and returns a StageResult
whose checks drive the exit status.
"""
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

from ensembles import covariance as cov
from ensembles import equilibrium as eq
from ensembles import fluctuations as fl
from ensembles.exact import (
    build_exact, build_exact_rational, closed_form_krawtchouk_Z, polynomial_fit_residual,
    rational_residues, residue_report, stieltjes_covariance,
)
from ensembles.exceptions import AssumptionViolation, ConfigurationError, EnumerationLimitError, MissingStageOutput
from ensembles.mcmc import default_burn_in, run_chains
from ensembles.weights import build

from .artifacts import StageOutput, read_csv, write_csv

logger = logging.getLogger(__name__)

FIT_TOL = 1e-8
REFERENCE_TOL = 1e-3
SYMMETRY_TOL = 1e-8
COVARIANCE_SE = 3.0
PSEUDODISTANCE_SAMPLES = 100
DEFAULT_POINT = (3.0, 0.0)
EXACT_CAP = 10**5


@dataclass
class StageResult:
    name: str
    checks: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def failed(self):
        return [name for name, ok in self.checks.items() if not ok]


class StageContext:
    """Shared state of one run: the equilibrium measure and samples are computed once."""

    def __init__(self, config):
        self.config = config
        self.preset = config.model_preset
        self._equilibrium = None
        self._spectral = None
        self._spectral_error = None
        self._samples = {}

    def output(self, stage):
        return StageOutput(self.config.out_dir, stage)

    def build(self, N):
        return build(self.preset, N)

    @property
    def points(self):
        return self.config.complex_points or (complex(*DEFAULT_POINT),)

    @property
    def polynomials(self):
        return self.config.polynomials or ((0.0, 1.0),)

    def equilibrium(self):
        if self._equilibrium is None:
            _, model = self.build(max(self.config.N))
            self._equilibrium = eq.solve_equilibrium(model, grid_size=self.config.grid_size)
        return self._equilibrium

    def spectral(self):
        """Spectral data, or None when the one-band-per-interval assumption fails."""
        if self._spectral is None and self._spectral_error is None:
            measure = self.equilibrium()
            try:
                self._spectral = eq.spectral_data(measure, measure.model)
            except AssumptionViolation as e:
                logger.warning(f"No spectral data for {self.preset.name}: {e}")
                self._spectral_error = str(e)
        return self._spectral

    def samples(self, N):
        """Samples for N: cached, else read from the sample stage output, else sampled now."""
        if N not in self._samples:
            positions = self._stored_positions(N)
            if positions is None:
                positions = sample_N(self, N)
            self._samples[N] = self.collect(positions, N)
        return self._samples[N]

    def collect(self, positions, N):
        return fl.collect_samples(
            positions, N, self.polynomials, self.points, thinning=self.config.chain['thinning'],
            chains=self.config.chain['chains'],
        )

    def _stored_positions(self, N):
        """Positions from <out>/sample/N{N}.csv, or None when absent or drawn under other settings."""
        out = self.output('sample')
        name, diagnostics = f'N{N}.csv', f'N{N}_diagnostics.json'
        if not out.exists(name):
            return None
        stored = out.read_json(diagnostics).get('sample_digest') if out.exists(diagnostics) else None
        if stored != self.config.sample_digest():
            logger.warning(f"Samples in {out.path(name)} were drawn under other settings; resampling N={N}")
            return None
        rows = out.read_csv(name)
        logger.info(f"Loaded {len(rows)} samples for N={N} from {out.path(name)}")
        return np.array([[float(r[f'l_{i + 1}']) for i in range(N)] for r in rows])


# ──────────────────────────────────────────────
# Stages
# ──────────────────────────────────────────────

def verify_nekrasov(ctx):
    """Residues of R_N at every candidate pole, by quadrature and, where possible, exactly."""
    config, out = ctx.config, ctx.output('verify_nekrasov')
    result = StageResult('verify_nekrasov')
    entries = []
    for N in config.N:
        spec, model = ctx.build(N)
        ens = build_exact(spec, model)
        report = residue_report(ens)
        entry = {
            'N': N, 'configurations': ens.size,
            'max_relative_residue': report['max_relative_residue'], 'passed': report['passed'],
            'radius': report['radius'], 'poles': report['poles'],
        }
        result.checks[f'residues_N{N}'] = report['passed']

        if model.polynomial is not None and not model.truncated:
            residual = polynomial_fit_residual(ens)
            entry['polynomial_fit_residual'] = residual
            result.checks[f'polynomial_fit_N{N}'] = residual < FIT_TOL
            if _rational_mode(spec, model):
                rens = build_exact_rational(spec, model)
                nonzero = [str(p) for p, value in rational_residues(rens).items() if value != 0]
                entry['rational_nonzero_residues'] = nonzero
                result.checks[f'rational_residues_N{N}'] = not nonzero
                if model.name == 'krawtchouk' and Fraction(spec.theta) == 1:
                    closed = closed_form_krawtchouk_Z(N, model.M)
                    entry['partition_function'] = str(rens.Z)
                    result.checks[f'partition_function_N{N}'] = rens.Z == closed
        logger.info(f"Nekrasov check N={N}: worst relative residue {report['max_relative_residue']:.3e}")
        entries.append(entry)

    out.json('report.json', {'preset': ctx.preset.name, 'theta': config.theta, 'results': entries})
    result.summary = {'N': list(config.N), 'worst': max(e['max_relative_residue'] for e in entries)}
    return result


def _rational_mode(spec, model):
    theta = Fraction(spec.theta).limit_denominator(1000)
    return theta.denominator <= 2 and float(theta) == spec.theta and model.polynomial.real_roots


def equilibrium(ctx):
    out = ctx.output('equilibrium')
    result = StageResult('equilibrium')
    measure = ctx.equilibrium()
    spectral = ctx.spectral()

    out.csv('density.csv', ['x', 'mu', 'band_label'], eq.density_rows(measure))
    report = eq.band_report(measure, spectral)
    if spectral is None:
        report['assumption_violation'] = ctx._spectral_error

    if ctx.preset.name == 'krawtchouk' and ctx.config.theta == 1.0:
        m = float(ctx.preset.get('m'))
        errors = eq.krawtchouk_reference_error(measure, m)
        report['reference_sup_error'] = errors['sup_error']
        report['reference_band_sup_error'] = errors['band_sup_error']
        result.checks['reference_density'] = report['reference_band_sup_error'] < REFERENCE_TOL
    out.json('band_report.json', report)
    result.summary = {'bands': report['bands'], 'kkt_residual': measure.kkt_residual}
    return result


def sample_N(ctx, N):
    """Run the chains for one N and write <out>/sample/N{N}.csv; returns the stacked positions."""
    config, out = ctx.config, ctx.output('sample')
    chain = config.chain
    spec, _ = ctx.build(N)
    results = run_chains(
        ctx.preset, N, samples=chain['samples'], burn_in=chain['burn_in'], thinning=chain['thinning'],
        seed=config.seed, chains=chain['chains'], threads=config.threads,
    )
    header = ['chain', 'step'] + [f'l_{i + 1}' for i in range(N)]
    rows = []
    for r in results:
        positions = r.positions(spec)
        for step, row in zip(r.steps, positions):
            rows.append([r.chain_index, int(step)] + [float(x) for x in row])
    out.csv(f'N{N}.csv', header, rows)

    z = ctx.points[0]
    diagnostics = {
        'N': N,
        'sample_digest': config.sample_digest(),
        'burn_in_sweeps': chain['burn_in'] or default_burn_in(N),
        'chains': [
            {
                'chain': r.chain_index,
                'acceptance_rate': r.acceptance_rate,
                'ess_re_G': fl.effective_sample_size(fl.stieltjes_of(r.positions(spec), N, z)),
            }
            for r in results
        ],
        'ess_point': [z.real, z.imag],
    }
    out.json(f'N{N}_diagnostics.json', diagnostics)
    return np.concatenate([r.positions(spec) for r in results], axis=0)


def sample(ctx):
    result = StageResult('sample')
    for N in ctx.config.N:
        ctx._samples.pop(N, None)
        positions = sample_N(ctx, N)
        ctx._samples[N] = ctx.collect(positions, N)
    result.summary = {'N': list(ctx.config.N), 'samples_per_N': {N: ctx._samples[N].count for N in ctx.config.N}}
    return result


def _kernel(ctx):
    spectral = ctx.spectral()
    if spectral is None:
        return None
    return cov.kernel_from_equilibrium(ctx.equilibrium(), spectral)


def clt(ctx):
    """Cumulant trends of N G_N at the configured points and of the polynomial statistics."""
    config, out = ctx.config, ctx.output('clt')
    result = StageResult('clt')
    samples = {N: ctx.samples(N) for N in config.N}
    first = samples[config.N[0]]

    trend, reports = [], {}
    for key in first.names:
        rows = fl.cumulant_trend(samples, key)
        trend.extend({'observable': key, **row} for row in rows)
        if key.startswith('G:'):
            report = fl.gaussianity_report(rows)
            reports[key] = report
            result.checks[f'gaussianity_{key}'] = report['passed']

    covariances = []
    points = ctx.points
    kernel = _kernel(ctx) if len(points) >= 2 else None
    largest = samples[max(config.N)]
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            estimate = fl.estimate_cumulants(largest, [f'G:{i}', f'G:{j}'])
            entry = {'pair': [i, j], **estimate.as_dict()}
            if kernel is not None:
                limit = complex(kernel.covariance(points[i], points[j]))
                entry['kernel'] = [limit.real, limit.imag]
                gap = abs(complex(estimate.value) - limit)
                entry['within_se'] = bool(gap <= COVARIANCE_SE * max(estimate.standard_error, 1e-300))
                result.checks[f'covariance_G:{i}_G:{j}'] = entry['within_se']
            covariances.append(entry)

    out.csv('trend.csv', ['observable', 'N', 'cumulant_order', 'value', 'stderr'], trend)
    out.json('cumulants.json', {'gaussianity': reports, 'covariances': covariances, 'N': list(config.N)})
    result.summary = {'observables': first.names}
    return result


def lln(ctx):
    config, out = ctx.config, ctx.output('lln')
    result = StageResult('lln')
    measure = ctx.equilibrium()
    samples = {N: ctx.samples(N) for N in config.N}
    rows, reports = [], {}
    for j, coefficients in enumerate(ctx.polynomials):
        report = fl.lln_check(samples, measure, Polynomial(coefficients))
        reports[f'poly:{j}'] = report
        rows.extend({'observable': f'poly:{j}', **row} for row in report['rows'])
        result.checks[f'lln_poly:{j}'] = report['decreasing'] or len(config.N) < 2
    out.csv('trend.csv', ['observable', 'N', 'reference', 'mean_gap', 'stderr', 'scaled_gap'], rows)
    out.json('report.json', reports)
    return result


def tails(ctx):
    config, out = ctx.config, ctx.output('tails')
    result = StageResult('tails')
    measure = ctx.equilibrium()
    radii = config.radii
    if not radii:
        lo, hi = measure.support
        radii = (2.0 * max(abs(lo), abs(hi)),)
    samples = {N: ctx.samples(N) for N in config.N}

    report = fl.tail_check(samples, radii)
    every = max(1, min(s.count for s in samples.values()) // PSEUDODISTANCE_SAMPLES)
    distance = fl.pseudodistance_trend(samples, measure, every=every)
    out.csv('tails.csv', ['N', 'D', 'exceedances', 'samples', 'frequency'], report['rows'])
    out.csv('pseudodistance.csv', ['N', 'pseudodistance', 'samples'], distance['rows'])
    out.json('report.json', {'tails': report, 'pseudodistance': distance})
    if len(config.N) >= 2:
        for D, ok in report['decaying'].items():
            result.checks[f'tail_decay_{D}'] = ok
        result.checks['pseudodistance_decreasing'] = distance['decreasing']
    return result


def covariance(ctx):
    """Kernel grid, polynomial-statistic covariances, mean correction and the exact small-N comparison."""
    config, out = ctx.config, ctx.output('covariance')
    result = StageResult('covariance')
    measure = ctx.equilibrium()
    spectral = ctx.spectral()
    if spectral is None:
        raise AssumptionViolation(f"covariance needs one band per interval: {ctx._spectral_error}")
    kernel = cov.kernel_from_equilibrium(measure, spectral)
    points = ctx.points

    rows = cov.kernel_grid(kernel, points, points)
    out.csv('kernel_grid.csv', ['u_re', 'u_im', 'v_re', 'v_im', 'c_re', 'c_im'], rows)
    values = {(r[0], r[1], r[2], r[3]): complex(r[4], r[5]) for r in rows}
    asymmetry = max(
        abs(values[(a, b, c, d)] - values[(c, d, a, b)]) for (a, b, c, d) in values
    )
    result.checks['kernel_symmetry'] = asymmetry <= SYMMETRY_TOL * max(1.0, max(abs(v) for v in values.values()))

    stats = []
    polys = [Polynomial(p) for p in ctx.polynomials]
    for i in range(len(polys)):
        for j in range(i, len(polys)):
            stats.append({'i': i, 'j': j, 'covariance': cov.linear_stat_covariance(polys[i], polys[j], kernel)})
    out.csv('linear_stats.csv', ['i', 'j', 'covariance'], stats)

    corrections = [
        {'u_re': z.real, 'u_im': z.imag, **_complex_columns(cov.mean_correction(kernel, measure, measure.model, z))}
        for z in points
    ]
    out.csv('mean_correction.csv', ['u_re', 'u_im', 'value_re', 'value_im'], corrections)

    exact = _exact_covariances(ctx, points)
    report = {
        'mode': kernel.mode,
        'endpoints': [list(e) for e in kernel.endpoints],
        'theta': kernel.theta,
        'asymmetry': asymmetry,
        'exact': exact,
    }
    if kernel.mode == 'multi_cut_upsilon':
        report['omega_condition'] = kernel.upsilon.condition
    out.json('report.json', report)
    result.summary = {'mode': kernel.mode}
    return result


def _complex_columns(value):
    value = complex(value)
    return {'value_re': value.real, 'value_im': value.imag}


def _exact_covariances(ctx, points):
    """Exact Cov(N G_N(u), N G_N(v)) for every enumerable N, for comparison with the kernel."""
    if len(points) < 2:
        return []
    rows = []
    for N in ctx.config.N:
        spec, model = ctx.build(N)
        try:
            ens = build_exact(spec, model, cap=EXACT_CAP)
        except EnumerationLimitError as e:
            logger.info(f"Skipping exact covariance at N={N}: {e}")
            continue
        value = stieltjes_covariance(ens, points[0], points[1])
        rows.append({'N': N, 'value': [value.real, value.imag]})
    return rows


STAGES = {
    'verify_nekrasov': verify_nekrasov,
    'equilibrium': equilibrium,
    'sample': sample,
    'covariance': covariance,
    'clt': clt,
    'lln': lln,
    'tails': tails,
}


# ──────────────────────────────────────────────
# Plot data
# ──────────────────────────────────────────────

def export_plot_data(out_dir):
    """Tidy CSVs under <out>/plot/ from whatever stage outputs exist."""
    root = Path(out_dir)
    written = []
    density = root / 'equilibrium' / 'density.csv'
    if density.exists():
        rows = read_csv(density)
        written.append(write_csv(root / 'plot' / 'density.csv', ['x', 'mu', 'band_label'],
                                 [[r['x'], r['mu'], r['band_label']] for r in rows]))
    grid = root / 'covariance' / 'kernel_grid.csv'
    if grid.exists():
        header = ['u_re', 'u_im', 'v_re', 'v_im', 'c_re', 'c_im']
        rows = read_csv(grid)
        written.append(write_csv(root / 'plot' / 'covariance_heatmap.csv', header, [[r[h] for h in header] for r in rows]))
    trend = root / 'clt' / 'trend.csv'
    if trend.exists():
        rows = read_csv(trend)
        header = ['N', 'cumulant_order', 'value', 'stderr']
        for observable in sorted({r['observable'] for r in rows}):
            name = observable.replace(':', '')
            selected = [[r[h] for h in header] for r in rows if r['observable'] == observable]
            written.append(write_csv(root / 'plot' / f'trend_{name}.csv', header, selected))
    if not written:
        raise MissingStageOutput(f"no stage outputs under {root} (expected equilibrium, covariance or clt)")
    logger.info(f"Exported {len(written)} plot file(s) to {root / 'plot'}")
    return written


def check_stage_name(name):
    if name not in STAGES:
        raise ConfigurationError(f"unknown stage {name}; choose one of {', '.join(STAGES)}")
    return STAGES[name]
