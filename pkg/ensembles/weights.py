"""
Weight model zoo.

Each model pairs a lattice state space with a log-weight log w(x; N) and the ratio
decomposition w(x)/w(x-1) = phi_plus_N(x)/phi_minus_N(x), together with the N -> infinity
data used by the equilibrium and covariance modules:

    phi_pm_N(N z) = phi_pm(z) + varphi_pm_N(z)/N + O(1/N^2)

Presets: krawtchouk, multicut_krawtchouk, hahn_hexagon, hexagon_hole, convex_potential,
zw_measure. All weights are evaluated in log-space through log-gamma.
"""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq
from scipy.special import gammaln, loggamma, xlogy
from django.conf import settings

from .exceptions import BoundaryError, ConfigurationError
from .lattice import StateSpaceSpec, frac

logger = logging.getLogger(__name__)

PRESET_NAMES = (
    'krawtchouk',
    'multicut_krawtchouk',
    'hahn_hexagon',
    'hexagon_hole',
    'convex_potential',
    'zw_measure',
)

SITE_TOL = 1e-9


@dataclass(frozen=True)
class ModelPreset:
    name: str
    parameters: dict = field(default_factory=dict)
    theta: float = 1.0

    def __post_init__(self):
        if self.name not in PRESET_NAMES:
            raise ConfigurationError(f"unknown preset '{self.name}'; choose one of {', '.join(PRESET_NAMES)}")
        if not self.theta > 0:
            raise ConfigurationError(f"theta must be positive, got {self.theta}")

    def get(self, key, default=None):
        return self.parameters.get(key, default)


# ──────────────────────────────────────────────
# Parameter helpers
# ──────────────────────────────────────────────

def as_complex(value):
    """Accept a number or a [re, im] pair."""
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigurationError(f"complex parameters are written as [re, im], got {value}")
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def _float_list(preset, key, length=None, default=None):
    raw = preset.get(key, default)
    if raw is None:
        raise ConfigurationError(f"preset {preset.name} requires parameter '{key}'")
    if not isinstance(raw, (list, tuple)):
        raw = [raw]
    values = [float(v) for v in raw]
    if length is not None and len(values) != length:
        raise ConfigurationError(f"parameter '{key}' must have {length} entries, got {len(values)}")
    return values


def _require(preset, key):
    if key not in preset.parameters:
        raise ConfigurationError(f"preset {preset.name} requires parameter '{key}'")
    return float(preset.parameters[key])


def _nearest_int(value):
    return int(math.floor(value + 0.5))


def split_fillings(N, fractions_hat):
    """Integer fillings n_i = round(N * n_hat_i); the last interval absorbs the remainder."""
    counts = [_nearest_int(N * f) for f in fractions_hat[:-1]]
    counts.append(N - sum(counts))
    if any(n < 1 for n in counts):
        raise ConfigurationError(f"N={N} too small for filling fractions {list(fractions_hat)}")
    return counts


def top_site(lowest, n, theta, upper):
    """Largest admissible site <= upper for a group of n particles whose lowest site is `lowest`."""
    slack = math.floor(upper - lowest - theta * (n - 1) + SITE_TOL)
    if slack < 0:
        raise ConfigurationError(
            f"no room for {n} particles between {lowest} and {upper} at theta={theta}"
        )
    return lowest + theta * (n - 1) + slack


def log_antiderivative(x, root):
    """Real antiderivative of ln|x - root| for real x and a real or complex root."""
    x = np.asarray(x, dtype=np.float64)
    root = complex(root)
    y = x - root.real
    b = abs(root.imag)
    if b < 1e-14:
        return xlogy(y, np.abs(y)) - y
    return 0.5 * (y * np.log(y * y + b * b) - 2.0 * y) + b * np.arctan(y / b)


def _poly_eval(x, roots, lead, scale=1.0):
    x = np.asarray(x)
    return lead * np.prod(x[..., None] - np.asarray(roots), axis=-1) / scale


# ──────────────────────────────────────────────
# Base classes
# ──────────────────────────────────────────────

class WeightModel:
    """Common surface of every preset; subclasses fill in the evaluators."""

    name = ''
    truncated = False

    def __init__(self, preset, N):
        if N < 1:
            raise ConfigurationError(f"N must be at least 1, got {N}")
        self.preset = preset
        self.theta = float(preset.theta)
        self.N = int(N)
        self.spec = None
        self.support_hint = ()
        self.truncation = None
        self.interval_constants = ()

    # finite-N evaluators
    def log_weight(self, x):
        raise NotImplementedError

    def phi_plus_N(self, xi):
        raise NotImplementedError

    def phi_minus_N(self, xi):
        raise NotImplementedError

    # limits
    def phi_plus(self, z):
        raise NotImplementedError

    def phi_minus(self, z):
        raise NotImplementedError

    def varphi_plus_N(self, z):
        raise NotImplementedError

    def varphi_minus_N(self, z):
        raise NotImplementedError

    def potential(self, x):
        raise NotImplementedError

    def potential_derivative(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.log(np.abs(self.phi_minus(x))) - np.log(np.abs(self.phi_plus(x)))

    def interval_potential(self, x, interval):
        """V on interval i including its gauge constant."""
        shift = self.interval_constants[interval] if self.interval_constants else 0.0
        return self.potential(x) - shift

    @property
    def filling_fractions(self):
        return tuple(n / self.N for n in self.spec.fillings)

    @property
    def polynomial(self):
        return None

    def boundary_poles(self):
        """Lattice points where R_N may keep a pole because the weight is cut off artificially."""
        if not self.truncated:
            return ()
        (a, b), = self.spec.intervals
        return (self.spec.bases[0], b + 1)

    def describe(self):
        return {
            'preset': self.name,
            'theta': self.theta,
            'N': self.N,
            'intervals': [list(iv) for iv in self.spec.intervals],
            'fillings': list(self.spec.fillings),
            'support_hint': [list(iv) for iv in self.support_hint],
            'truncation_radius': self.truncation,
        }


@dataclass(frozen=True)
class PolynomialData:
    """phi_pm_N(x) = lead * prod(x - roots_N) / N**deg and phi_pm(z) = lead * prod(z - roots)."""
    plus_roots_N: tuple
    minus_roots_N: tuple
    plus_roots: tuple
    minus_roots: tuple
    plus_lead: float
    minus_lead: float

    @property
    def degree(self):
        return max(len(self.plus_roots), len(self.minus_roots))

    @property
    def real_roots(self):
        return all(abs(complex(r).imag) == 0 for r in self.plus_roots_N + self.minus_roots_N)

    def limit_polynomials(self):
        """(phi_plus, phi_minus) as numpy Polynomials with real coefficients."""
        plus = Polynomial.fromroots(self.plus_roots) * self.plus_lead
        minus = Polynomial.fromroots(self.minus_roots) * self.minus_lead
        return Polynomial(np.real(plus.coef)), Polynomial(np.real(minus.coef))


class PolynomialWeightModel(WeightModel):
    """Models whose phi_pm_N are polynomials; limits and corrections follow from the roots."""

    def _polynomial_data(self):
        raise NotImplementedError

    @property
    def polynomial(self):
        if not hasattr(self, '_poly_cache'):
            self._poly_cache = self._polynomial_data()
        return self._poly_cache

    def phi_plus_N(self, xi):
        data = self.polynomial
        return _poly_eval(xi, data.plus_roots_N, data.plus_lead, float(self.N) ** len(data.plus_roots_N))

    def phi_minus_N(self, xi):
        data = self.polynomial
        return _poly_eval(xi, data.minus_roots_N, data.minus_lead, float(self.N) ** len(data.minus_roots_N))

    def phi_plus(self, z):
        data = self.polynomial
        return _poly_eval(z, data.plus_roots, data.plus_lead)

    def phi_minus(self, z):
        data = self.polynomial
        return _poly_eval(z, data.minus_roots, data.minus_lead)

    def _correction(self, z, roots_N, roots, lead):
        z = np.asarray(z)
        roots = np.asarray(roots, dtype=complex)
        shifts = np.asarray(roots_N, dtype=complex) - self.N * roots
        total = np.zeros(z.shape, dtype=complex)
        for j in range(len(roots)):
            others = np.delete(roots, j)
            total = total + shifts[j] * np.prod(z[..., None] - others, axis=-1)
        result = -lead * total
        if not np.iscomplexobj(z) and np.all(np.abs(np.imag(result)) < 1e-12):
            return np.real(result)
        return result

    def varphi_plus_N(self, z):
        data = self.polynomial
        return self._correction(z, data.plus_roots_N, data.plus_roots, data.plus_lead)

    def varphi_minus_N(self, z):
        data = self.polynomial
        return self._correction(z, data.minus_roots_N, data.minus_roots, data.minus_lead)

    def potential(self, x):
        data = self.polynomial
        x = np.asarray(x, dtype=np.float64)
        total = np.log(abs(data.minus_lead / data.plus_lead)) * x
        for r in data.minus_roots:
            total = total + log_antiderivative(x, r)
        for r in data.plus_roots:
            total = total - log_antiderivative(x, r)
        return total

    # exact rational evaluators
    def _exact(self, xi, roots, lead):
        value = Fraction(lead)
        for r in roots:
            value *= Fraction(xi) - Fraction(float(np.real(r)))
        return value / Fraction(self.N) ** len(roots)

    def phi_plus_N_exact(self, xi):
        return self._exact(xi, self.polynomial.plus_roots_N, self.polynomial.plus_lead)

    def phi_minus_N_exact(self, xi):
        return self._exact(xi, self.polynomial.minus_roots_N, self.polynomial.minus_lead)


# ──────────────────────────────────────────────
# Krawtchouk family
# ──────────────────────────────────────────────

class MulticutKrawtchoukModel(PolynomialWeightModel):
    """
    k intervals with phi_minus_N(x) = prod_j (x - a_j)/N and phi_plus_N(x) = -prod_j (x - b_j - 1)/N.

    On interval i the weight is exp(N c_i) times Gamma factors; for k = 1, a = 0, b = M it is
    binomial(M, x).
    """
    name = 'multicut_krawtchouk'

    def __init__(self, preset, N):
        super().__init__(preset, N)
        a_hat = _float_list(preset, 'a_hat')
        k = len(a_hat)
        b_hat = _float_list(preset, 'b_hat', k)
        fill_hat = _float_list(preset, 'fillings', k, default=[1.0] if k == 1 else None)
        c_hat = _float_list(preset, 'c_hat', k, default=[0.0] * k)
        self._validate(a_hat, b_hat, fill_hat)
        self.a_hat, self.b_hat, self.fill_hat, self.c_hat = a_hat, b_hat, fill_hat, c_hat

        counts = split_fillings(self.N, fill_hat)
        theta = self.theta
        lows, tops = [], []
        for ah, bh, n in zip(a_hat, b_hat, counts):
            low = math.ceil(self.N * ah - SITE_TOL)
            lows.append(float(low))
            tops.append(top_site(low, n, theta, self.N * bh))
        self.lows, self.tops = tuple(lows), tuple(tops)
        shift = frac(theta)
        self.spec = StateSpaceSpec(
            theta=theta,
            N=self.N,
            intervals=tuple((low - shift, top) for low, top in zip(lows, tops)),
            fillings=tuple(counts),
        )
        self.support_hint = tuple(zip(a_hat, b_hat))
        self.interval_constants = tuple(c_hat)

    def _validate(self, a_hat, b_hat, fill_hat):
        theta = self.theta
        for i, (ah, bh, nh) in enumerate(zip(a_hat, b_hat, fill_hat)):
            if not ah < bh:
                raise ConfigurationError(f"interval {i}: a_hat={ah} must be below b_hat={bh}")
            if not 0 < nh < (bh - ah) / theta:
                raise ConfigurationError(
                    f"interval {i}: filling {nh} must lie in (0, {(bh - ah) / theta:.6g})"
                )
        for i in range(len(a_hat) - 1):
            if not b_hat[i] < a_hat[i + 1]:
                raise ConfigurationError(f"intervals {i} and {i + 1} overlap")
        if abs(sum(fill_hat) - 1.0) > 1e-9:
            raise ConfigurationError(f"filling fractions must sum to 1, got {sum(fill_hat)}")

    def _polynomial_data(self):
        return PolynomialData(
            plus_roots_N=tuple(t + 1 for t in self.tops),
            minus_roots_N=self.lows,
            plus_roots=tuple(self.b_hat),
            minus_roots=tuple(self.a_hat),
            plus_lead=-1.0,
            minus_lead=1.0,
        )

    def _interval_of(self, x):
        idx = np.full(x.shape, -1, dtype=np.int64)
        for i, (low, top) in enumerate(zip(self.lows, self.tops)):
            idx[(x >= low - SITE_TOL) & (x <= top + SITE_TOL)] = i
        return idx

    def log_weight(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, -np.inf)
        idx = self._interval_of(x)
        for i, (low_i, top_i) in enumerate(zip(self.lows, self.tops)):
            mask = idx == i
            if not np.any(mask):
                continue
            xi = x[mask]
            val = self.N * self.c_hat[i] + gammaln(top_i - low_i + 1)
            val = val - gammaln(xi - low_i + 1) - gammaln(top_i - xi + 1)
            for j, (low_j, top_j) in enumerate(zip(self.lows, self.tops)):
                if j < i:
                    val = val + gammaln(xi - top_j) - gammaln(xi - low_j + 1)
                elif j > i:
                    val = val + gammaln(low_j - xi) - gammaln(top_j - xi + 1)
            out[mask] = val
        return out


class KrawtchoukModel(MulticutKrawtchoukModel):
    """Binomial ensemble: weight binomial(M, x) on {0, ..., M}, M the top admissible site below m*N."""
    name = 'krawtchouk'

    def __init__(self, preset, N):
        m = _require(preset, 'm')
        if not m > 1:
            raise ConfigurationError(f"krawtchouk requires m > 1, got {m}")
        if not m > preset.theta:
            raise ConfigurationError(f"krawtchouk requires m > theta, got m={m}, theta={preset.theta}")
        inner = ModelPreset(
            name='multicut_krawtchouk',
            parameters={'a_hat': [0.0], 'b_hat': [m], 'fillings': [1.0], 'c_hat': [0.0]},
            theta=preset.theta,
        )
        super().__init__(inner, N)
        self.preset = preset
        self.m = m

    @property
    def M(self):
        return int(round(self.tops[0]))


# ──────────────────────────────────────────────
# Hexagon families
# ──────────────────────────────────────────────

def _log_pochhammer(x, n):
    """log (x)_n for x > 0."""
    return gammaln(x + n) - gammaln(x)


class HahnHexagonModel(PolynomialWeightModel):
    """
    Lozenge tilings of an A x B x C hexagon: weight (S - x)_{t-B} (x)_{t-C} on sites 1..S-1,
    t = B + C - N, S = A + B + C + 1 - t. Side lengths are given relative to N.
    """
    name = 'hahn_hexagon'

    def __init__(self, preset, N):
        super().__init__(preset, N)
        A_hat, B_hat, C_hat = (_require(preset, key) for key in ('A', 'B', 'C'))
        if not A_hat > 0:
            raise ConfigurationError(f"hahn_hexagon requires A > 0, got {A_hat}")
        if not (B_hat > 1 and C_hat > 1):
            raise ConfigurationError(f"hahn_hexagon requires B > 1 and C > 1, got B={B_hat}, C={C_hat}")
        self._setup_sides(A_hat, B_hat, C_hat, D_hat=0.0)
        if not 1.0 < self.S_hat / self.theta:
            raise ConfigurationError(f"hexagon too thin for theta={self.theta}: A + 1 must exceed theta")

        top = top_site(1, self.N, self.theta, self.A + self.B + self.C - self.t)
        self.S = top + 1
        self.spec = StateSpaceSpec(
            theta=self.theta, N=self.N, intervals=((1 - frac(self.theta), top),), fillings=(self.N,),
        )
        self.support_hint = ((0.0, self.S_hat),)

    def _setup_sides(self, A_hat, B_hat, C_hat, D_hat):
        N = self.N
        self.A_hat, self.B_hat, self.C_hat, self.D_hat = A_hat, B_hat, C_hat, D_hat
        self.t_hat = B_hat + C_hat - D_hat - 1.0
        self.S_hat = A_hat + B_hat + C_hat - self.t_hat
        self.A, self.B, self.C, self.D = (_nearest_int(v * N) for v in (A_hat, B_hat, C_hat, D_hat))
        self.t = self.B + self.C - self.D - N
        if self.A < 1 or self.t <= max(self.B, self.C):
            raise ConfigurationError(
                f"N={N} too small for hexagon sides A={A_hat}, B={B_hat}, C={C_hat}"
            )

    def _polynomial_data(self):
        S, t, B, C = self.S, self.t, self.B, self.C
        return PolynomialData(
            plus_roots_N=(float(C + 1 - t), float(S)),
            minus_roots_N=(1.0, float(S + t - B)),
            plus_roots=(self.C_hat - self.t_hat, self.S_hat),
            minus_roots=(0.0, self.A_hat + self.C_hat),
            plus_lead=-1.0,
            minus_lead=-1.0,
        )

    def log_weight(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, -np.inf)
        ok = (x > SITE_TOL) & (x < self.S - SITE_TOL)
        xs = x[ok]
        out[ok] = _log_pochhammer(self.S - xs, self.t - self.B) + _log_pochhammer(xs, self.t - self.C)
        return out


class HexagonHoleModel(HahnHexagonModel):
    """
    Hexagon with a D-sized hole at height H: extra factor ((H - x)_D)^2, two intervals
    [1, H-1] and [H+D, S-1] with fillings n_1, n_2.
    """
    name = 'hexagon_hole'

    def __init__(self, preset, N):
        WeightModel.__init__(self, preset, N)
        A_hat, B_hat, C_hat, D_hat, H_hat = (_require(preset, key) for key in ('A', 'B', 'C', 'D', 'H'))
        fill_hat = _float_list(preset, 'fillings', 2)
        if not (A_hat > 0 and D_hat > 0):
            raise ConfigurationError("hexagon_hole requires A > 0 and D > 0")
        self._setup_sides(A_hat, B_hat, C_hat, D_hat)
        self.H_hat = H_hat
        theta = self.theta
        if not (0 < H_hat and H_hat + D_hat < self.S_hat):
            raise ConfigurationError(f"hole [{H_hat}, {H_hat + D_hat}] must sit strictly inside (0, {self.S_hat})")
        if abs(sum(fill_hat) - 1.0) > 1e-9:
            raise ConfigurationError(f"filling fractions must sum to 1, got {sum(fill_hat)}")
        if not 0 < fill_hat[0] < H_hat / theta:
            raise ConfigurationError(f"lower filling must lie in (0, {H_hat / theta:.6g})")
        if not 0 < fill_hat[1] < (self.S_hat - H_hat - D_hat) / theta:
            raise ConfigurationError(
                f"upper filling must lie in (0, {(self.S_hat - H_hat - D_hat) / theta:.6g})"
            )
        self.fill_hat = fill_hat

        n1, n2 = split_fillings(self.N, fill_hat)
        H_int = _nearest_int(H_hat * N)
        top1 = top_site(1, n1, theta, H_int - 1)
        self.H = top1 + 1
        low2 = self.H + self.D
        top2 = top_site(low2, n2, theta, self.A + self.B + self.C - self.t)
        self.S = top2 + 1
        shift = frac(theta)
        self.spec = StateSpaceSpec(
            theta=theta, N=self.N,
            intervals=((1 - shift, top1), (low2 - shift, top2)),
            fillings=(n1, n2),
        )
        self.support_hint = ((0.0, H_hat), (H_hat + D_hat, self.S_hat))

    def _polynomial_data(self):
        S, t, B, C, H, D = self.S, self.t, self.B, self.C, self.H, self.D
        return PolynomialData(
            plus_roots_N=(float(C + 1 - t), float(S), float(H), float(H)),
            minus_roots_N=(1.0, float(S + t - B), float(H + D), float(H + D)),
            plus_roots=(self.C_hat - self.t_hat, self.S_hat, self.H_hat, self.H_hat),
            minus_roots=(0.0, self.A_hat + self.C_hat, self.H_hat + self.D_hat, self.H_hat + self.D_hat),
            plus_lead=-1.0,
            minus_lead=-1.0,
        )

    def log_weight(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = HahnHexagonModel.log_weight(self, x)
        below = x <= self.H - 1 + SITE_TOL
        above = x >= self.H + self.D - SITE_TOL
        hole = ~(below | above)
        out[below] += 2 * _log_pochhammer(self.H - x[below], self.D)
        out[above] += 2 * (gammaln(x[above] - self.H + 1) - gammaln(x[above] - self.H - self.D + 1))
        out[hole] = -np.inf
        return out


# ──────────────────────────────────────────────
# Truncated families
# ──────────────────────────────────────────────

def _truncated_spec(theta, N, radius):
    low = -math.floor(radius * N + SITE_TOL)
    top = top_site(low, N, theta, radius * N)
    return StateSpaceSpec(theta=theta, N=N, intervals=((low - frac(theta), top),), fillings=(N,))


class ConvexPotentialModel(WeightModel):
    """w(x) = exp(-kappa N V(x/N)) for a convex polynomial V, truncated to [-DN, DN]."""
    name = 'convex_potential'
    truncated = True

    def __init__(self, preset, N):
        super().__init__(preset, N)
        self.V, self.kappa = convex_potential_of(preset)
        self.dV = self.V.deriv()
        self.d2V = self.V.deriv(2)
        self.truncation = truncation_radius(preset)
        self.spec = _truncated_spec(self.theta, self.N, self.truncation)
        self.support_hint = ((-self.truncation, self.truncation),)

    def log_weight(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -self.kappa * self.N * self.V(x / self.N)

    def phi_plus_N(self, xi):
        xi = np.asarray(xi)
        return np.exp(-self.kappa * self.N * (self.V(xi / self.N) - self.V((xi - 1) / self.N)))

    def phi_minus_N(self, xi):
        return np.ones_like(np.asarray(xi), dtype=np.result_type(np.asarray(xi), float))

    def phi_plus(self, z):
        return np.exp(-self.kappa * self.dV(np.asarray(z)))

    def phi_minus(self, z):
        return np.ones_like(np.asarray(z), dtype=np.result_type(np.asarray(z), float))

    def varphi_plus_N(self, z):
        z = np.asarray(z)
        return 0.5 * self.kappa * self.d2V(z) * np.exp(-self.kappa * self.dV(z))

    def varphi_minus_N(self, z):
        return np.zeros_like(np.asarray(z), dtype=np.result_type(np.asarray(z), float))

    def potential(self, x):
        return self.kappa * self.V(np.asarray(x, dtype=np.float64))

    def potential_derivative(self, x):
        return self.kappa * self.dV(np.asarray(x, dtype=np.float64))


class ZWMeasureModel(PolynomialWeightModel):
    """
    w(x) = 1 / (Gamma(z - x) Gamma(conj z - x) Gamma(w + x) Gamma(conj w + x)) with
    z = z_inf N + dz, w = w_inf N + dw, truncated to [-DN, DN].
    """
    name = 'zw_measure'
    truncated = True

    def __init__(self, preset, N):
        super().__init__(preset, N)
        self.z_inf, self.w_inf = zw_parameters(preset)
        self.dz = as_complex(preset.get('dz', 0.0))
        self.dw = as_complex(preset.get('dw', 0.0))
        self.z = self.z_inf * self.N + self.dz
        self.w = self.w_inf * self.N + self.dw
        self.truncation = truncation_radius(preset)
        self.spec = _truncated_spec(self.theta, self.N, self.truncation)
        self.support_hint = ((-self.truncation, self.truncation),)

    def _polynomial_data(self):
        z, w, zi, wi = self.z, self.w, self.z_inf, self.w_inf
        return PolynomialData(
            plus_roots_N=(z, z.conjugate()),
            minus_roots_N=(1 - w, 1 - w.conjugate()),
            plus_roots=(zi, zi.conjugate()),
            minus_roots=(-wi, -wi.conjugate()),
            plus_lead=1.0,
            minus_lead=1.0,
        )

    def phi_plus_N(self, xi):
        return _real_if_real_input(xi, super().phi_plus_N(xi))

    def phi_minus_N(self, xi):
        return _real_if_real_input(xi, super().phi_minus_N(xi))

    def phi_plus(self, z):
        return _real_if_real_input(z, super().phi_plus(z))

    def phi_minus(self, z):
        return _real_if_real_input(z, super().phi_minus(z))

    def log_weight(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -2.0 * np.real(loggamma(self.z - x) + loggamma(self.w + x))


def _real_if_real_input(arg, value):
    if np.iscomplexobj(np.asarray(arg)):
        return value
    return np.real(value)


# ──────────────────────────────────────────────
# Potentials, truncation radius, build
# ──────────────────────────────────────────────

def convex_potential_of(preset):
    coefficients = _float_list(preset, 'coefficients')
    V = Polynomial(coefficients)
    kappa = float(preset.get('kappa', 1.0))
    if not kappa > 0:
        raise ConfigurationError(f"kappa must be positive, got {kappa}")
    degree = V.degree()
    if degree < 2 or degree % 2 or V.coef[-1] <= 0:
        raise ConfigurationError("convex_potential needs an even-degree polynomial with positive leading coefficient")
    d2 = V.deriv(2)
    real_roots = [r for r in np.atleast_1d(d2.roots()) if abs(np.imag(r)) < 1e-12]
    if d2.degree() > 0 and real_roots:
        raise ConfigurationError("convex_potential requires V'' > 0 on the real line")
    if d2.degree() == 0 and d2.coef[0] <= 0:
        raise ConfigurationError("convex_potential requires V'' > 0 on the real line")
    return V, kappa


def zw_parameters(preset):
    if 'z_inf' not in preset.parameters or 'w_inf' not in preset.parameters:
        raise ConfigurationError("zw_measure requires parameters 'z_inf' and 'w_inf'")
    z_inf = as_complex(preset.get('z_inf'))
    w_inf = as_complex(preset.get('w_inf'))
    growth = (z_inf + w_inf).real
    if not growth > max(1.0, preset.theta):
        raise ConfigurationError(
            f"zw_measure requires Re(z_inf + w_inf) > max(1, theta), got {growth}"
        )
    return z_inf, w_inf


def _zw_limit_potential(z_inf, w_inf):
    def V(x):
        x = np.asarray(x, dtype=np.float64)
        total = np.zeros_like(x)
        for r in (-w_inf, -w_inf.conjugate()):
            total = total + log_antiderivative(x, r)
        for r in (z_inf, z_inf.conjugate()):
            total = total - log_antiderivative(x, r)
        return total
    # |x + w|^2 = |x - z|^2 has a single real solution
    x_min = (abs(z_inf) ** 2 - abs(w_inf) ** 2) / (2.0 * (z_inf + w_inf).real)
    return V, x_min


def truncation_radius(preset, epsilon=None, safety=None):
    """
    Radius D beyond which kappa*(V - min V) exceeds 2 theta (1 + eps) ln|x|, times a safety factor.

    Only defined for convex_potential and zw_measure.
    """
    theta = preset.theta
    epsilon = float(preset.get('epsilon', settings.DBETA_TAIL_EPSILON if epsilon is None else epsilon))
    safety = float(preset.get('safety', settings.DBETA_TRUNCATION_SAFETY if safety is None else safety))

    if preset.name == 'convex_potential':
        V, kappa = convex_potential_of(preset)
        critical = [r.real for r in np.atleast_1d(V.deriv().roots()) if abs(r.imag) < 1e-9]
        v_min = min(V(c) for c in critical) if critical else V(0.0)

        def excess(x):
            return kappa * (V(x) - v_min) - 2 * theta * (1 + epsilon) * np.log(np.abs(x))
    elif preset.name == 'zw_measure':
        z_inf, w_inf = zw_parameters(preset)
        if not (z_inf + w_inf).real > theta * (1 + epsilon):
            raise ConfigurationError(
                f"zw_measure potential grows too slowly for theta={theta}: "
                f"Re(z_inf + w_inf) must exceed {theta * (1 + epsilon):.6g}"
            )
        V, x_min = _zw_limit_potential(z_inf, w_inf)
        v_min = float(V(x_min))

        def excess(x):
            return V(x) - v_min - 2 * theta * (1 + epsilon) * np.log(np.abs(x))
    else:
        raise ConfigurationError(f"truncation radius is only defined for truncated presets, not {preset.name}")

    radius = 1.0
    for sign in (1.0, -1.0):
        grid = sign * np.geomspace(1.0, 1e6, 2401)
        values = excess(grid)
        if values[-1] <= 0:
            raise ConfigurationError(
                f"potential fails the growth condition V > 2 theta (1+eps) ln|x| for {preset.name}"
            )
        negative = np.nonzero(values <= 0)[0]
        if negative.size == 0:
            continue
        j = negative[-1]
        root = brentq(lambda r: float(excess(sign * r)), abs(grid[j]), abs(grid[j + 1]))
        radius = max(radius, root)

    base = max(1.0 + 1.0 / theta, radius)
    logger.debug(f"Truncation radius for {preset.name}: analytic {base:.6g}, safety {safety}")
    return safety * base


MODEL_CLASSES = {
    'krawtchouk': KrawtchoukModel,
    'multicut_krawtchouk': MulticutKrawtchoukModel,
    'hahn_hexagon': HahnHexagonModel,
    'hexagon_hole': HexagonHoleModel,
    'convex_potential': ConvexPotentialModel,
    'zw_measure': ZWMeasureModel,
}


def build(preset, N):
    """Lattice spec and weight model of a preset at size N."""
    model = MODEL_CLASSES[preset.name](preset, N)
    return model.spec, model


def polynomial_data(model):
    """Roots and leading coefficients of phi_plus/phi_minus, finite N and limit."""
    data = model.polynomial
    if data is None:
        raise ConfigurationError(f"{model.name} has no polynomial ratio functions")
    return data


def log_weight_ratio(model, x):
    """log w(x) - log w(x-1) through the ratio functions."""
    minus = complex(model.phi_minus_N(np.asarray(x, dtype=np.float64)))
    if minus == 0:
        raise BoundaryError(f"phi_minus_N vanishes at x={x}: x-1 is outside the support")
    plus = complex(model.phi_plus_N(np.asarray(x, dtype=np.float64)))
    if plus == 0:
        raise BoundaryError(f"phi_plus_N vanishes at x={x}: x is outside the support")
    return math.log(abs(plus)) - math.log(abs(minus))
