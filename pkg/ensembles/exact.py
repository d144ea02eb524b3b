"""
Brute-force oracle for small N.

Enumerates the whole state space, tabulates unnormalized log-masses

    prod_{i<j} Gamma(d+1) Gamma(d+theta) / (Gamma(d) Gamma(d+1-theta)) * prod_i w(l_i),  d = l_j - l_i,

and evaluates expectations, joint cumulants and Nekrasov's observable R_N exactly. A
q-deformed table (q-Gamma pairwise factors) and an exact rational mode (Fractions, for
2*theta a positive integer and polynomial phi_pm_N) are also provided.
"""
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import ConfigurationError, VerificationFailure
from .lattice import ParticleConfig, enumerate_configs

logger = logging.getLogger(__name__)

RESIDUE_POINTS = 64
RESIDUE_TOL = 1e-10
QPOCH_TAIL = 1e-15
CHUNK_ELEMENTS = 2_000_000


# ──────────────────────────────────────────────
# Pairwise factors
# ──────────────────────────────────────────────

def log_pair_factor(d, theta):
    """log of Gamma(d+1)Gamma(d+theta)/(Gamma(d)Gamma(d+1-theta)) for gaps d >= theta."""
    d = np.asarray(d, dtype=np.float64)
    if theta == 1.0:
        return 2.0 * np.log(d)
    return gammaln(d + 1) + gammaln(d + theta) - gammaln(d) - gammaln(d + 1 - theta)


def _log_q_number(x, log_q):
    """log [x]_q = log((1 - q^x)/(1 - q))."""
    return np.log(-np.expm1(x * log_q)) - np.log(-np.expm1(log_q))


@lru_cache(maxsize=4096)
def log_qgamma_ratio(x, y, q):
    """log Gamma_q(x) - log Gamma_q(y) for x, y > 0."""
    log_q = math.log(q)
    shift = x - y
    steps = round(shift)
    if abs(shift - steps) < 1e-12 and steps >= 0:
        return float(sum(_log_q_number(y + k, log_q) for k in range(steps)))
    # (y - x) log(1 - q) + log (q^y; q)_inf - log (q^x; q)_inf
    lead = min(x, y)
    n_max = max(1, math.ceil(math.log(QPOCH_TAIL * (1 - q) / q ** lead) / log_q))
    n = np.arange(n_max, dtype=np.float64)
    series = np.sum(np.log1p(-np.exp((y + n) * log_q)) - np.log1p(-np.exp((x + n) * log_q)))
    tail = -(q ** y - q ** x) * q ** n_max / (1 - q)
    return float((y - x) * math.log1p(-q) + series + tail)


def log_pair_factor_q(d, theta, q):
    """log of q^{-theta d} Gamma_q(d+1)Gamma_q(d+theta)/(Gamma_q(d)Gamma_q(d+1-theta))."""
    log_q = math.log(q)
    d = np.asarray(d, dtype=np.float64)
    flat = d.ravel()
    values = np.empty_like(flat)
    for idx, gap in enumerate(flat):
        key = round(float(gap), 12)
        values[idx] = log_qgamma_ratio(key + theta, key + 1 - theta, q)
    ratio = values.reshape(d.shape)
    return -theta * d * log_q + _log_q_number(d, log_q) + ratio


def _pair_sum(positions, pair_fn):
    n_configs, N = positions.shape
    total = np.zeros(n_configs)
    for i in range(N):
        for j in range(i + 1, N):
            total += pair_fn(positions[:, j] - positions[:, i])
    return total


# ──────────────────────────────────────────────
# Ensemble
# ──────────────────────────────────────────────

@dataclass
class ExactEnsemble:
    spec: object
    model: object
    positions: np.ndarray
    log_masses: np.ndarray
    log_Z: float
    q: float = None

    @property
    def probabilities(self):
        return np.exp(self.log_masses - self.log_Z)

    @property
    def table(self):
        return [(ParticleConfig(tuple(row)), float(lm)) for row, lm in zip(self.positions, self.log_masses)]

    @property
    def size(self):
        return self.positions.shape[0]

    def evaluate(self, f):
        """Per-configuration values of f, which maps a positions row to a number."""
        return np.array([f(row) for row in self.positions])


def _collect_positions(spec, cap):
    rows = [config.positions for config in enumerate_configs(spec, cap=cap)]
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), spec.N)


def build_exact(spec, model, cap=None):
    positions = _collect_positions(spec, cap)
    log_w = model.log_weight(positions).sum(axis=1)
    log_masses = _pair_sum(positions, lambda d: log_pair_factor(d, spec.theta)) + log_w
    log_Z = float(logsumexp(log_masses))
    logger.debug(f"Exact ensemble: {positions.shape[0]} configurations, log Z = {log_Z:.12g}")
    return ExactEnsemble(spec=spec, model=model, positions=positions, log_masses=log_masses, log_Z=log_Z)


def build_exact_q(spec, model, q, cap=None):
    if not 0 < q < 1:
        raise ConfigurationError(f"q must lie in (0, 1), got {q}")
    positions = _collect_positions(spec, cap)
    log_w = model.log_weight(positions).sum(axis=1)
    log_masses = _pair_sum(positions, lambda d: log_pair_factor_q(d, spec.theta, q)) + log_w
    log_Z = float(logsumexp(log_masses))
    return ExactEnsemble(spec=spec, model=model, positions=positions, log_masses=log_masses, log_Z=log_Z, q=q)


def expectation(ens, f):
    values = ens.evaluate(f)
    return complex(np.dot(ens.probabilities, values))


def stieltjes_values(ens, u):
    """G_N(u) = (1/N) sum_i 1/(u - l_i/N) per configuration."""
    N = ens.spec.N
    return np.mean(1.0 / (complex(u) - ens.positions / N), axis=1)


def mean_stieltjes(ens, u):
    return complex(np.dot(ens.probabilities, stieltjes_values(ens, u)))


def stieltjes_covariance(ens, u, v):
    """Cov(N G_N(u), N G_N(v)) without complex conjugation."""
    N = ens.spec.N
    p = ens.probabilities
    gu = N * stieltjes_values(ens, u)
    gv = N * stieltjes_values(ens, v)
    return complex(np.dot(p, gu * gv) - np.dot(p, gu) * np.dot(p, gv))


# ──────────────────────────────────────────────
# Joint cumulants
# ──────────────────────────────────────────────

def set_partitions(items):
    """All set partitions of a list, each as a list of blocks."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partition in set_partitions(rest):
        for idx in range(len(partition)):
            yield partition[:idx] + [[first] + partition[idx]] + partition[idx + 1:]
        yield [[first]] + partition


def cumulant_from_moments(values, weights=None):
    """
    Joint cumulant of the columns of `values` (n_samples x k) under sample weights.

    Sum over set partitions pi of (|pi|-1)! (-1)^{|pi|-1} prod_B E[prod_{j in B} X_j].
    """
    values = np.asarray(values)
    n, k = values.shape
    if weights is None:
        weights = np.full(n, 1.0 / n)
    moments = {}

    def moment(block):
        key = tuple(sorted(block))
        if key not in moments:
            moments[key] = np.dot(weights, np.prod(values[:, list(key)], axis=1))
        return moments[key]

    total = 0.0
    for partition in set_partitions(range(k)):
        size = len(partition)
        term = math.factorial(size - 1) * (-1) ** (size - 1)
        for block in partition:
            term = term * moment(block)
        total = total + term
    return total


def joint_cumulant(ens, observables):
    if not 1 <= len(observables) <= 6:
        raise ConfigurationError(f"joint_cumulant takes 1 to 6 observables, got {len(observables)}")
    columns = np.column_stack([ens.evaluate(f) for f in observables])
    return complex(cumulant_from_moments(columns, ens.probabilities))


# ──────────────────────────────────────────────
# Nekrasov's observable
# ──────────────────────────────────────────────

def _weighted_products(ens, xi, factor):
    """E[prod_i factor(xi, l_i)] for every xi."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    p = ens.probabilities
    n_configs, N = ens.positions.shape
    chunk = max(1, CHUNK_ELEMENTS // max(1, xi.size * N))
    out = np.zeros(xi.shape, dtype=complex)
    for start in range(0, n_configs, chunk):
        block = ens.positions[start:start + chunk]
        gaps = xi[None, :, None] - block[:, None, :]
        out += p[start:start + chunk] @ np.prod(factor(gaps), axis=2)
    return out


def _scalar_if_scalar(xi, values):
    return complex(values[0]) if np.ndim(xi) == 0 else values


def nekrasov_R(ens, xi):
    """phi_minus_N E[prod(1 - theta/(xi - l_i))] + phi_plus_N E[prod(1 + theta/(xi - l_i - 1))]."""
    theta = ens.spec.theta
    z = np.atleast_1d(np.asarray(xi, dtype=complex))
    minus = _weighted_products(ens, z, lambda g: 1.0 - theta / g)
    plus = _weighted_products(ens, z, lambda g: 1.0 + theta / (g - 1.0))
    values = ens.model.phi_minus_N(z) * minus + ens.model.phi_plus_N(z) * plus
    return _scalar_if_scalar(xi, values)


def nekrasov_R_q(ens_q, xi, q=None):
    q = ens_q.q if q is None else q
    if q is None:
        raise ConfigurationError("nekrasov_R_q needs an ensemble built with q-masses")
    theta = ens_q.spec.theta
    log_q = math.log(q)
    z = np.atleast_1d(np.asarray(xi, dtype=complex))

    def minus_factor(g):
        return math.exp(0.5 * theta * log_q) * np.expm1((g - theta) * log_q) / np.expm1(g * log_q)

    def plus_factor(g):
        return math.exp(-0.5 * theta * log_q) * np.expm1((g - 1 + theta) * log_q) / np.expm1((g - 1) * log_q)

    minus = _weighted_products(ens_q, z, minus_factor)
    plus = _weighted_products(ens_q, z, plus_factor)
    values = ens_q.model.phi_minus_N(z) * minus + ens_q.model.phi_plus_N(z) * plus
    return _scalar_if_scalar(xi, values)


def candidate_poles(ens):
    """Every l_i and l_i + 1 over the state space, minus artificial truncation boundaries."""
    sites = np.unique(np.round(ens.positions.ravel(), 9))
    poles = np.unique(np.concatenate([sites, sites + 1.0]))
    excluded = np.asarray(ens.model.boundary_poles(), dtype=np.float64)
    if excluded.size:
        keep = np.all(np.abs(poles[:, None] - excluded[None, :]) > 1e-9, axis=1)
        poles = poles[keep]
    return poles


def residue_report(ens, evaluator=None, poles=None, points=RESIDUE_POINTS, tol=RESIDUE_TOL, strict=False):
    """
    Residues of R_N at candidate poles by trapezoidal quadrature on small circles.

    Returns a dict with per-pole moduli (relative to max|R| on the circle) and a pass flag.
    """
    evaluator = evaluator or (lambda z: nekrasov_R(ens, z))
    poles = candidate_poles(ens) if poles is None else np.asarray(poles, dtype=np.float64)
    spacing = np.min(np.diff(poles)) if poles.size > 1 else 1.0
    radius = min(0.1, 0.4 * spacing)
    angles = 2 * np.pi * np.arange(points) / points
    ring = radius * np.exp(1j * angles)

    nodes = (poles[:, None] + ring[None, :]).ravel()
    values = np.asarray(evaluator(nodes)).reshape(poles.size, points)
    residues = np.mean(values * ring[None, :], axis=1)
    scale = np.maximum(np.max(np.abs(values), axis=1), 1e-300)
    relative = np.abs(residues) / scale

    worst = float(np.max(relative)) if relative.size else 0.0
    passed = bool(worst < tol)
    rows = [
        {'pole': float(m), 'residue_abs': float(abs(r)), 'relative': float(rel)}
        for m, r, rel in zip(poles, residues, relative)
    ]
    if not passed:
        logger.error(f"Residue check failed: worst relative residue {worst:.3e} (tol {tol:.1e})")
        if strict:
            raise VerificationFailure(f"R_N has a non-removable pole: relative residue {worst:.3e}")
    return {'poles': rows, 'max_relative_residue': worst, 'radius': radius, 'passed': passed}


def polynomial_fit_residual(ens, degree=None, evaluator=None):
    """Fit R_N at degree+2 generic points by a polynomial of the given degree; relative residual."""
    if ens.model.truncated:
        raise ConfigurationError("R_N keeps boundary poles for truncated models; no polynomial fit")
    if degree is None:
        if ens.model.polynomial is None:
            raise ConfigurationError("polynomial fit needs a model with polynomial phi_pm_N")
        degree = ens.model.polynomial.degree
    evaluator = evaluator or (lambda z: nekrasov_R(ens, z))
    lo, hi = float(ens.positions.min()), float(ens.positions.max()) + 1.0
    center, radius = 0.5 * (lo + hi), 0.5 * (hi - lo) + 1.0
    count = degree + 2
    angles = 0.37 + 2 * np.pi * np.arange(count) / count
    nodes = center + radius * np.exp(1j * angles)
    values = np.asarray(evaluator(nodes))
    basis = np.vander((nodes - center) / radius, degree + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(basis, values, rcond=None)
    residual = np.max(np.abs(basis @ coef - values))
    return float(residual / max(np.max(np.abs(values)), 1e-300))


# ──────────────────────────────────────────────
# Exact rational mode
# ──────────────────────────────────────────────

@dataclass
class RationalEnsemble:
    spec: object
    model: object
    configs: list
    masses: list
    Z: Fraction


def _rational_pair(d, theta):
    """Gamma(d+1)Gamma(d+theta)/(Gamma(d)Gamma(d+1-theta)) for 2*theta a positive integer."""
    value = d
    for k in range(int(2 * theta) - 1):
        value *= d + 1 - theta + k
    return value


def _rational_weights(spec, model):
    """Weights telescoped from phi_pm_N per group and residue class, starting from 1."""
    theta = Fraction(spec.theta)
    weights = {}
    for (a, b), base, n in zip(spec.intervals, spec.bases, spec.fillings):
        top = Fraction(b)
        for rank in range(min(n, theta.denominator)):
            site = Fraction(base) + rank * theta
            value = Fraction(1)
            weights[site] = value
            while site + 1 <= top:
                site += 1
                minus = model.phi_minus_N_exact(site)
                if minus == 0:
                    raise VerificationFailure(f"phi_minus_N vanishes inside the support at {site}")
                value = value * model.phi_plus_N_exact(site) / minus
                weights[site] = value
    return weights


def build_exact_rational(spec, model, cap=None):
    theta = Fraction(spec.theta)
    if theta.denominator > 2 or theta <= 0:
        raise ConfigurationError(f"exact rational mode needs 2*theta to be a positive integer, got {spec.theta}")
    data = model.polynomial
    if data is None or not data.real_roots or model.truncated:
        raise ConfigurationError(f"exact rational mode needs real polynomial phi_pm_N; {model.name} has none")

    weights = _rational_weights(spec, model)
    configs, masses = [], []
    for config in enumerate_configs(spec, cap=cap):
        ell = [Fraction(x) for x in config.positions]
        mass = Fraction(1)
        for i in range(len(ell)):
            mass *= weights[ell[i]]
            for j in range(i + 1, len(ell)):
                mass *= _rational_pair(ell[j] - ell[i], theta)
        configs.append(ell)
        masses.append(mass)
    return RationalEnsemble(spec=spec, model=model, configs=configs, masses=masses, Z=sum(masses, Fraction(0)))


def rational_residues(rens):
    """Exact residue of R_N at every candidate pole; all must be zero."""
    theta = Fraction(rens.spec.theta)
    model = rens.model
    residues = {}
    for ell, mass in zip(rens.configs, rens.masses):
        for i, x in enumerate(ell):
            others = ell[:i] + ell[i + 1:]
            # pole at x from the minus product
            term = -theta * model.phi_minus_N_exact(x) * mass
            for y in others:
                term *= 1 - theta / (x - y)
            residues[x] = residues.get(x, Fraction(0)) + term
            # pole at x + 1 from the plus product
            m = x + 1
            term = theta * model.phi_plus_N_exact(m) * mass
            for y in others:
                term *= 1 + theta / (m - y - 1)
            residues[m] = residues.get(m, Fraction(0)) + term
    return {pole: value / rens.Z for pole, value in sorted(residues.items())}


def exact_rational_residues(spec, model, cap=None):
    return rational_residues(build_exact_rational(spec, model, cap=cap))


def closed_form_krawtchouk_Z(N, M):
    """2^{N(M-N+1)} (M!)^N prod_{j<N} j!/(M-j)! as an exact rational."""
    value = Fraction(2) ** (N * (M - N + 1)) * Fraction(math.factorial(M)) ** N
    for j in range(N):
        value *= Fraction(math.factorial(j), math.factorial(M - j))
    return value
