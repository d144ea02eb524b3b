"""
Monte-Carlo estimates for linear statistics and Stieltjes transforms.

Samples are stored as positions l_i; observables use x = l_i / N:

    L_f = sum_i f(l_i / N),    N G_N(z) = sum_i 1 / (z - l_i / N).

Cumulants of order <= 4 come with batch-means standard errors.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import simpson
from scipy.special import xlogy
from scipy.stats import kstat
from django.conf import settings

from .equilibrium import integrate
from .exact import cumulant_from_moments
from .exceptions import ConfigurationError, ContractViolation, InsufficientDataError

logger = logging.getLogger(__name__)

MIN_BATCHES = 20
MAX_ORDER = 4
PSEUDODISTANCE_POWER = 3
FOURIER_T_MIN = 1e-4
FOURIER_TAIL = 1e-6
FOURIER_MAX_NODES = 4_000_000
NEAR_FIELD = 20.0


@dataclass
class LinearStatSample:
    N: int
    positions: np.ndarray
    polynomials: tuple = ()
    points: tuple = ()
    linear: np.ndarray = None
    stieltjes: np.ndarray = None
    thinning: int = 1
    chains: int = 1

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def names(self):
        return [f'poly:{j}' for j in range(len(self.polynomials))] + [f'G:{j}' for j in range(len(self.points))]

    def column(self, key):
        """'poly:j' -> L_{f_j}; 'G:j' -> N G_N(z_j)."""
        kind, _, index = key.partition(':')
        try:
            j = int(index)
            if kind == 'poly':
                return self.linear[:, j]
            if kind == 'G':
                return self.N * self.stieltjes[:, j]
        except (ValueError, IndexError):
            pass
        raise ConfigurationError(f"unknown observable {key!r}; expected one of {self.names}")

    def empirical_mean(self, f):
        """Per-sample int f d mu_N = (1/N) sum_i f(l_i / N)."""
        return np.mean(f(self.positions / self.N), axis=1)


def stieltjes_of(positions, N, z):
    return np.mean(1.0 / (complex(z) - np.asarray(positions) / N), axis=-1)


def collect_samples(configs, N, polynomials=(), points=(), thinning=1, chains=1):
    """configs: an (n, N) array of positions or an iterable of ParticleConfig."""
    if isinstance(configs, np.ndarray):
        positions = np.asarray(configs, dtype=np.float64)
    else:
        positions = np.array([c.as_array() for c in configs], dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != N:
        raise ConfigurationError(f"samples must have N={N} positions each, got shape {positions.shape}")

    x = positions / N
    polynomials = tuple(tuple(float(c) for c in p) for p in polynomials)
    points = tuple(complex(z) for z in points)
    linear = np.empty((positions.shape[0], len(polynomials)))
    for j, coefficients in enumerate(polynomials):
        linear[:, j] = Polynomial(coefficients)(x).sum(axis=1)
    values = np.empty((positions.shape[0], len(points)), dtype=complex)
    for j, z in enumerate(points):
        values[:, j] = stieltjes_of(positions, N, z)
    return LinearStatSample(
        N=N, positions=positions, polynomials=polynomials, points=points,
        linear=linear, stieltjes=values, thinning=thinning, chains=chains,
    )


def samples_from_chains(results, spec, polynomials=(), points=(), thinning=1):
    """Concatenate chain results (chain-index order) into one sample."""
    positions = np.concatenate([r.positions(spec) for r in results], axis=0)
    return collect_samples(positions, spec.N, polynomials, points, thinning, chains=len(results))


# ──────────────────────────────────────────────
# Error bars
# ──────────────────────────────────────────────

def batch_means_se(series, batches=None):
    """Standard error of the mean from non-overlapping batch means; 0 for a constant series."""
    batches = settings.DBETA_BATCHES if batches is None else batches
    series = np.asarray(series)
    size = series.size // batches
    if batches < 2 or size < 1:
        raise InsufficientDataError(f"{series.size} samples cannot form {batches} batches")
    means = series[:batches * size].reshape(batches, size).mean(axis=1)
    return _spread(means)


def _spread(estimates):
    estimates = np.asarray(estimates)
    variance = np.var(estimates.real, ddof=1) + np.var(np.imag(estimates), ddof=1)
    return float(np.sqrt(variance / estimates.size))


def effective_sample_size(series):
    """n / tau with tau from the FFT autocovariance truncated by Geyer's initial monotone sequence."""
    x = np.real(np.asarray(series, dtype=complex))
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    spectrum = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(spectrum * np.conj(spectrum))[:n] / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    pairs = rho[:2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    positive = np.flatnonzero(pairs <= 0)
    pairs = pairs[:positive[0]] if positive.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = max(-1.0 + 2.0 * float(pairs.sum()), 1.0 / n)
    return float(n / tau)


# ──────────────────────────────────────────────
# Cumulants
# ──────────────────────────────────────────────

@dataclass
class CumulantEstimate:
    order: int
    value: complex
    standard_error: float
    observables: tuple = ()
    batches: int = 0
    effective_sample_size: float = 0.0

    def as_dict(self):
        return {
            'order': self.order,
            'observables': list(self.observables),
            'value_re': float(np.real(self.value)),
            'value_im': float(np.imag(self.value)),
            'standard_error': self.standard_error,
            'batches': self.batches,
            'effective_sample_size': self.effective_sample_size,
        }


def _cumulant(columns, keys_equal):
    if keys_equal and not np.iscomplexobj(columns):
        return float(kstat(columns[:, 0], columns.shape[1]))
    return complex(cumulant_from_moments(columns))


def estimate_cumulants(samples, observables, order=None, batches=None):
    """
    Joint cumulant of the listed observables ('poly:j', 'G:j'); a single observable with
    order=n gives its n-th cumulant. Real single-observable cumulants use k-statistics.
    """
    keys = list(observables)
    if order is not None:
        if len(keys) != 1:
            raise ConfigurationError("order applies to a single observable")
        keys = keys * int(order)
    order = len(keys)
    if not 1 <= order <= MAX_ORDER:
        raise ConfigurationError(f"cumulant order must lie in 1..{MAX_ORDER}, got {order}")

    batches = settings.DBETA_BATCHES if batches is None else batches
    n = samples.count
    minimum = settings.DBETA_MIN_CUMULANT_SAMPLES
    if batches < MIN_BATCHES:
        raise InsufficientDataError(f"{batches} batches requested, at least {MIN_BATCHES} needed")
    if n < minimum or n // batches < order + 1:
        raise InsufficientDataError(f"{n} samples are too few for an order-{order} cumulant in {batches} batches")

    columns = np.column_stack([samples.column(k) for k in keys])
    if np.iscomplexobj(columns) and not np.any(columns.imag):
        columns = columns.real
    same = len(set(keys)) == 1
    value = _cumulant(columns, same)

    size = n // batches
    per_batch = [_cumulant(columns[b * size:(b + 1) * size], same) for b in range(batches)]
    estimate = CumulantEstimate(
        order=order,
        value=value,
        standard_error=_spread(per_batch),
        observables=tuple(keys),
        batches=batches,
        effective_sample_size=effective_sample_size(columns[:, 0]),
    )
    logger.debug(f"Cumulant {keys} at N={samples.N}: {value} +- {estimate.standard_error:.3e}")
    return estimate


def cumulant_trend(samples_by_N, observable, orders=(1, 2, 3, 4), batches=None):
    """Rows (N, order, value, stderr) for one observable; complex values contribute their modulus."""
    rows = []
    for N in sorted(samples_by_N):
        for k in orders:
            estimate = estimate_cumulants(samples_by_N[N], [observable], order=k, batches=batches)
            rows.append({
                'N': N, 'cumulant_order': k,
                'value': float(np.abs(estimate.value)) if k > 2 else float(np.real(estimate.value)),
                'stderr': estimate.standard_error,
            })
    return rows


def decreasing_with_slack(values, errors, slack=1.0):
    """True when every value is at most the previous one plus slack standard errors."""
    return all(
        b <= a + slack * max(ea, eb)
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:])
    )


def gaussianity_report(rows):
    """|third| and |fourth| cumulants must shrink with N, up to one standard error."""
    report = {}
    for k in (3, 4):
        series = [r for r in rows if r['cumulant_order'] == k]
        report[f'order_{k}'] = {
            'N': [r['N'] for r in series],
            'value': [r['value'] for r in series],
            'stderr': [r['stderr'] for r in series],
            'decreasing': decreasing_with_slack([r['value'] for r in series], [r['stderr'] for r in series]),
        }
    report['passed'] = all(report[f'order_{k}']['decreasing'] for k in (3, 4))
    return report


# ──────────────────────────────────────────────
# Law of large numbers and tails
# ──────────────────────────────────────────────

def lln_check(samples_by_N, equilibrium, f, epsilon=None):
    """
    N^{1/2 - epsilon} |int f d mu_N - int f mu dx| per N, averaged over samples.
    equilibrium is one measure or a dict N -> measure (fillings n_i(N)/N).
    """
    epsilon = settings.DBETA_TAIL_EPSILON if epsilon is None else epsilon
    rows = []
    for N in sorted(samples_by_N):
        measure = equilibrium[N] if isinstance(equilibrium, dict) else equilibrium
        reference = integrate(measure, f)
        gaps = np.abs(samples_by_N[N].empirical_mean(f) - reference)
        gap = float(np.mean(gaps))
        rows.append({
            'N': N, 'reference': reference, 'mean_gap': gap,
            'stderr': batch_means_se(gaps, MIN_BATCHES) if gaps.size >= MIN_BATCHES else 0.0,
            'scaled_gap': N ** (0.5 - epsilon) * gap,
        })
    scaled = [r['scaled_gap'] for r in rows]
    decreasing = all(b <= a for a, b in zip(scaled, scaled[1:]))
    if not decreasing:
        logger.warning(f"LLN gap does not decrease in N: {scaled}")
    return {'epsilon': epsilon, 'rows': rows, 'decreasing': decreasing}


def tail_check(samples_by_N, radii):
    """
    Frequency of max_i |l_i|/N > D per (N, D) and the slope of log-frequency against N per D.
    A radius never exceeded at any N counts as decaying.
    """
    rows = []
    slopes, decaying = {}, {}
    Ns = sorted(samples_by_N)
    for D in radii:
        smoothed, total = [], 0
        for N in Ns:
            sample = samples_by_N[N]
            extreme = np.max(np.abs(sample.positions), axis=1) / N
            exceed = int(np.count_nonzero(extreme > D))
            total += exceed
            smoothed.append((exceed + 0.5) / (sample.count + 1))
            rows.append({
                'N': N, 'D': float(D), 'exceedances': exceed,
                'samples': sample.count, 'frequency': exceed / sample.count,
            })
        slope = float(np.polyfit(Ns, np.log(smoothed), 1)[0]) if len(Ns) >= 2 else 0.0
        slopes[str(float(D))] = slope
        decaying[str(float(D))] = total == 0 or slope < 0
    return {'rows': rows, 'slopes': slopes, 'decaying': decaying}


# ──────────────────────────────────────────────
# Pseudodistance
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class CellMeasure:
    """Signed or positive measure, uniform on each cell [lo_j, hi_j] with mass_j."""
    lo: np.ndarray
    hi: np.ndarray
    mass: np.ndarray = field(repr=False)

    @classmethod
    def from_atoms(cls, x, p=PSEUDODISTANCE_POWER):
        """Empirical measure of points x, each smeared uniformly over [x, x + n^{-p}]."""
        x = np.sort(np.asarray(x, dtype=np.float64))
        width = float(x.size) ** (-p)
        return cls(lo=x, hi=x + width, mass=np.full(x.size, 1.0 / x.size))

    @classmethod
    def from_equilibrium(cls, measure):
        keep = measure.density > 0
        grid = measure.grid
        return cls(lo=grid.lo[keep], hi=grid.hi[keep], mass=measure.density[keep] * grid.widths[keep])

    @classmethod
    def from_density(cls, edges, density):
        edges = np.asarray(edges, dtype=np.float64)
        return cls(lo=edges[:-1], hi=edges[1:], mass=np.asarray(density, dtype=np.float64) * np.diff(edges))

    def minus(self, other):
        return CellMeasure(
            lo=np.concatenate([self.lo, other.lo]),
            hi=np.concatenate([self.hi, other.hi]),
            mass=np.concatenate([self.mass, -other.mass]),
        )

    def check_bounded(self):
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ContractViolation("pseudodistance needs compactly supported measures")


def _G2(t):
    return 0.5 * xlogy(t * t, np.abs(t)) - 0.75 * t * t


def _mean_log_distance(lo_a, hi_a, lo_b, hi_b):
    """Average of ln|x - y| over x in cell a, y in cell b; far pairs use the midpoint expansion."""
    wa, wb = hi_a - lo_a, hi_b - lo_b
    d = 0.5 * (lo_a + hi_a) - 0.5 * (lo_b + hi_b)
    near = np.abs(d) < NEAR_FIELD * (wa + wb)
    with np.errstate(divide='ignore', invalid='ignore'):
        far = np.log(np.abs(d)) - (wa * wa + wb * wb) / (24.0 * d * d)
        exact = -(_G2(hi_a - hi_b) - _G2(hi_a - lo_b) - _G2(lo_a - hi_b) + _G2(lo_a - lo_b)) / (wa * wb)
    return np.where(near, exact, far)


def log_energy(sigma):
    """iint ln|x - y| dsigma(x) dsigma(y)."""
    lo, hi, m = sigma.lo, sigma.hi, sigma.mass
    total = 0.0
    chunk = max(1, 2_000_000 // max(1, lo.size))
    for s in range(0, lo.size, chunk):
        block = _mean_log_distance(lo[s:s + chunk, None], hi[s:s + chunk, None], lo[None, :], hi[None, :])
        total += float(m[s:s + chunk] @ block @ m)
    return total


def pseudodistance(nu, rho):
    """sqrt(-iint ln|x - y| d(nu - rho) d(nu - rho)) for two compactly supported probability measures."""
    nu.check_bounded()
    rho.check_bounded()
    value = -log_energy(nu.minus(rho))
    return float(np.sqrt(max(value, 0.0)))


def fourier_transform(sigma, t):
    """int e^{itx} dsigma(x) at frequencies t."""
    t = np.asarray(t, dtype=np.float64)
    mid = 0.5 * (sigma.lo + sigma.hi)
    half = 0.5 * (sigma.hi - sigma.lo)
    out = np.empty(t.shape, dtype=complex)
    chunk = max(1, 2_000_000 // max(1, mid.size))
    for s in range(0, t.size, chunk):
        block = t[s:s + chunk, None]
        out[s:s + chunk] = (np.exp(1j * block * mid) * np.sinc(block * half / np.pi)) @ sigma.mass
    return out


def fourier_pseudodistance(nu, rho, t_min=FOURIER_T_MIN, t_max=None):
    """
    sqrt(int_0^inf |(nu - rho)^(t)|^2 dt / t) by Simpson's rule on [t_min, t_max]; t_max defaults to
    the frequency beyond which the tail is below 1e-6.
    """
    nu.check_bounded()
    rho.check_bounded()
    sigma = nu.minus(rho)
    if t_max is None:
        steep = float(np.sum(np.abs(sigma.mass) / (sigma.hi - sigma.lo)))
        t_max = steep * np.sqrt(2.0 / FOURIER_TAIL)
    diameter = float(sigma.hi.max() - sigma.lo.min())
    step = 0.1 / max(diameter, 1e-12)
    count = int(np.ceil((t_max - 1.0) / step)) + 1
    if count > FOURIER_MAX_NODES:
        raise ContractViolation(f"Fourier cross-check needs {count} nodes; pass a smaller t_max")
    t = np.concatenate([np.geomspace(t_min, 1.0, 400, endpoint=False), np.linspace(1.0, max(t_max, 1.0), max(count, 2))])
    values = np.abs(fourier_transform(sigma, t)) ** 2 / t
    return float(np.sqrt(max(simpson(values, x=t), 0.0)))


def pseudodistance_trend(samples_by_N, equilibrium, p=PSEUDODISTANCE_POWER, every=1):
    """Mean D(nu_N, mu) over samples (every `every`-th one) per N."""
    rows = []
    for N in sorted(samples_by_N):
        measure = equilibrium[N] if isinstance(equilibrium, dict) else equilibrium
        rho = CellMeasure.from_equilibrium(measure)
        sample = samples_by_N[N]
        values = [
            pseudodistance(CellMeasure.from_atoms(positions / N, p), rho)
            for positions in sample.positions[::every]
        ]
        rows.append({'N': N, 'pseudodistance': float(np.mean(values)), 'samples': len(values)})
    series = [r['pseudodistance'] for r in rows]
    return {'p': p, 'rows': rows, 'decreasing': all(b <= a for a, b in zip(series, series[1:]))}
