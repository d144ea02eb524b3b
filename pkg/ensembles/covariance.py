"""
Limit covariance and mean correction of N G_N.

Normalization: every public covariance is the limit of Cov(N G_N(u), N G_N(v)) (equivalently
of the centered linear statistics) and equals theta^{-1} C(u, v), where the one-cut closed form
reads

    C(u, v) = -1/(2 (u - v)^2) * (1 - (uv - (a+b)(u+v)/2 + ab) / (s(u) s(v))),  s(u) = sqrt((u-a)(u-b)).

The hyperelliptic kernel c(z, w) built through the Upsilon map reduces at k = 1 to
(1/(z - w)^2)(1 - ...), i.e. c = -2 C; the factor -1/2 is applied once, in
CovarianceKernel.covariance.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from .equilibrium import sqrt_factor, stieltjes_derivative, _cell_cauchy
from .exceptions import ContourError, ContractViolation, DomainError

logger = logging.getLogger(__name__)

LEVELS = {'inner': 0.35, 'mid': 0.6, 'outer': 0.85}
START_NODES = 64
DIAGONAL_SWITCH = 1e-4
RICHARDSON_STEP = 2e-3
CONTRACT_TOL = 1e-7
CUT_TOL = 1e-14


def _level(level):
    value = LEVELS.get(level, level)
    if not 0 < float(value) < 1:
        raise ContourError(f"contour level must lie in (0, 1), got {level}")
    return float(value)


# ──────────────────────────────────────────────
# Contours
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class ContourSet:
    """
    Confocal ellipses z = mid + hw cosh(rho + i t), one around each segment. The semi-major axis
    is hw + level * margin, where margin is half the gap to the neighbouring segments (at most hw),
    so ellipses of any level in (0, 1) are disjoint and nested by level.
    """
    cores: tuple
    margins: tuple
    level: float

    @classmethod
    def around(cls, cores, level='inner'):
        cores = tuple(sorted((float(a), float(b)) for a, b in cores))
        margins = []
        for i, (a, b) in enumerate(cores):
            if not b > a:
                raise ContourError(f"degenerate segment [{a}, {b}]")
            room = [0.5 * (b - a)]
            if i > 0:
                room.append(0.5 * (a - cores[i - 1][1]))
            if i < len(cores) - 1:
                room.append(0.5 * (cores[i + 1][0] - b))
            if min(room) <= 0:
                raise ContourError(f"segments {cores} overlap; contours would touch a branch cut")
            margins.append(min(room))
        return cls(cores=cores, margins=tuple(margins), level=_level(level))

    def at(self, level):
        return ContourSet(cores=self.cores, margins=self.margins, level=_level(level))

    @property
    def k(self):
        return len(self.cores)

    @property
    def scale(self):
        return max(1.0, self.cores[-1][1] - self.cores[0][0])

    def ellipse(self, i):
        a, b = self.cores[i]
        mid, hw = 0.5 * (a + b), 0.5 * (b - a)
        rho = float(np.arccosh((hw + self.level * self.margins[i]) / hw))
        return mid, hw, rho

    def nodes(self, i, n):
        """Trapezoid nodes and weights dz (including 2 pi / n) on contour i."""
        mid, hw, rho = self.ellipse(i)
        t = 2.0 * np.pi * np.arange(n) / n
        z = mid + hw * np.cosh(rho + 1j * t)
        dz = 1j * hw * np.sinh(rho + 1j * t) * (2.0 * np.pi / n)
        return z, dz

    def all_nodes(self, n):
        parts = [self.nodes(i, n) for i in range(self.k)]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def inside(self, i, z):
        """Elliptic-radius test: the focal distance sum against 2 hw cosh(rho)."""
        mid, hw, rho = self.ellipse(i)
        z = np.asarray(z, dtype=complex)
        return np.abs(z - (mid - hw)) + np.abs(z - (mid + hw)) <= 2.0 * hw * np.cosh(rho)

    def check_outside(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        for i in range(self.k):
            if np.any(self.inside(i, z)):
                raise ContourError(
                    f"evaluation point inside contour {i} around {self.cores[i]} (level {self.level})"
                )


def _adaptive(evaluate, rtol, max_nodes, what):
    """Double the trapezoid node count until the relative change drops below rtol."""
    n = START_NODES
    previous, scale = evaluate(n)
    while n < max_nodes:
        n *= 2
        current, scale = evaluate(n)
        change = np.max(np.abs(current - previous))
        if change <= rtol * max(scale, np.max(np.abs(current))):
            return current, n
        previous = current
    raise ContourError(f"{what} did not converge with {max_nodes} nodes (last change {change:.3e})")


def loop_integrals(fn, contours, rtol=None, max_nodes=None):
    """
    (1/2 pi i) times the integral of fn over every contour; fn maps a 1-d array of nodes to values
    whose last axis runs over the nodes. Returns shape (..., k).
    """
    rtol = settings.DBETA_CONTOUR_RTOL if rtol is None else rtol
    max_nodes = settings.DBETA_CONTOUR_MAX_NODES if max_nodes is None else max_nodes
    out = []
    for i in range(contours.k):
        def evaluate(n, i=i):
            z, dz = contours.nodes(i, n)
            values = fn(z)
            total = (values * dz).sum(axis=-1) / (2j * np.pi)
            scale = float(np.max(np.abs(values))) * float(np.sum(np.abs(dz))) / (2.0 * np.pi)
            return total, scale
        value, _ = _adaptive(evaluate, rtol, max_nodes, f"loop integral around {contours.cores[i]}")
        out.append(value)
    return np.stack(out, axis=-1)


# ──────────────────────────────────────────────
# Omega and Upsilon
# ──────────────────────────────────────────────

def _monomial_basis(contours, degree):
    center = 0.5 * (contours.cores[0][0] + contours.cores[-1][1])
    scale = contours.scale

    def basis(z):
        z = np.asarray(z, dtype=complex)
        w = (z - center) / scale
        return np.stack([w ** j for j in range(degree + 1)], axis=-1)
    return basis


def omega_map(P, endpoints, contours, rtol=None, max_nodes=None):
    """Loop integrals of P(z)/prod sqrt((z - alpha_i)(z - beta_i)); P is a callable or coefficient list."""
    if len(endpoints) < 2:
        raise ContractViolation("the Omega map is defined for k >= 2 intervals")
    poly = P if callable(P) else np.polynomial.Polynomial(P)
    return loop_integrals(lambda z: poly(z) / sqrt_factor(endpoints, z), contours, rtol, max_nodes)


def omega_matrix(endpoints, contours, rtol=None, max_nodes=None):
    """Omega on the scaled monomials of degree <= k-2: a k x (k-1) matrix, its basis and condition number."""
    k = len(endpoints)
    if k < 2:
        raise ContractViolation("the Omega map is defined for k >= 2 intervals")
    basis = _monomial_basis(contours, k - 2)
    columns = loop_integrals(
        lambda z: np.moveaxis(basis(z), -1, 0) / sqrt_factor(endpoints, z), contours, rtol, max_nodes,
    )
    matrix = np.asarray(columns).T
    condition = float(np.linalg.cond(matrix[:k - 1, :]))
    return matrix, basis, condition


def _check_total_loop(loops):
    total = np.abs(np.sum(loops, axis=-1))
    bound = CONTRACT_TOL * np.maximum(1.0, np.max(np.abs(loops), axis=-1))
    if np.any(total > bound):
        raise ContractViolation(f"sum of loop integrals is {float(np.max(total)):.3e}, expected 0")


class Upsilon:
    """Adds P(z)/prod sqrt(...) with deg P <= k-2 so that every loop integral vanishes."""

    def __init__(self, endpoints, contours, rtol=None, max_nodes=None):
        self.endpoints = tuple(endpoints)
        self.contours = contours
        self.rtol, self.max_nodes = rtol, max_nodes
        self.k = len(self.endpoints)
        if self.k >= 2:
            self.omega, self.basis, self.condition = omega_matrix(self.endpoints, contours, rtol, max_nodes)
            self.pinv = np.linalg.pinv(self.omega)
            logger.debug(f"Omega condition number {self.condition:.3e}")

    def coefficients(self, loops):
        """P coefficients from loop integrals of shape (..., k)."""
        _check_total_loop(loops)
        if self.k < 2:
            return np.zeros(np.shape(loops)[:-1] + (0,), dtype=complex)
        return -np.asarray(loops) @ self.pinv.T

    def correction(self, coefficients, z):
        if self.k < 2:
            return np.zeros(np.shape(z), dtype=complex)
        return (self.basis(z) * coefficients).sum(axis=-1) / sqrt_factor(self.endpoints, z)


def upsilon_apply(f, endpoints, contours, rtol=None, max_nodes=None):
    """Evaluator z -> f(z) + P(z)/prod sqrt(...); k = 1 returns f unchanged."""
    upsilon = Upsilon(endpoints, contours, rtol, max_nodes)
    loops = loop_integrals(f, contours, rtol, max_nodes)
    coefficients = upsilon.coefficients(loops)
    if upsilon.k < 2:
        return f

    def apply(z):
        z = np.asarray(z, dtype=complex)
        return f(z) + upsilon.correction(coefficients, z)
    return apply


# ──────────────────────────────────────────────
# Kernels
# ──────────────────────────────────────────────

def _check_off_cut(z, a, b):
    z = np.asarray(z, dtype=complex)
    on_cut = (np.abs(z.imag) <= CUT_TOL * max(1.0, abs(b))) & (z.real >= a) & (z.real <= b)
    if np.any(on_cut):
        raise DomainError(f"kernel evaluated on its cut [{a}, {b}]")


def kernel_one_cut(u, v, a_minus, a_plus):
    """
    -1/(2(u-v)^2) (1 - X/(s(u)s(v))) evaluated as r^2 / (2 s(u) s(v) (s(u)s(v) + X)), which is the
    same function without the cancellation at u = v; r = (a_plus - a_minus)/2.
    """
    _check_off_cut(u, a_minus, a_plus)
    _check_off_cut(v, a_minus, a_plus)
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    endpoints = ((a_minus, a_plus),)
    su, sv = sqrt_factor(endpoints, u), sqrt_factor(endpoints, v)
    mid, r = 0.5 * (a_minus + a_plus), 0.5 * (a_plus - a_minus)
    X = (u - mid) * (v - mid) - r * r
    product = su * sv
    value = r * r / (2.0 * product * (product + X))
    return complex(value) if value.ndim == 0 else value


def _log_derivative(endpoints, z):
    """s'(z)/s(z) = (1/2) sum_i (1/(z - alpha_i) + 1/(z - beta_i))."""
    total = np.zeros(np.shape(z), dtype=complex)
    for alpha, beta in endpoints:
        total = total + 1.0 / (z - alpha) + 1.0 / (z - beta)
    return 0.5 * total


def kernel_bracket(endpoints, z, w):
    """1/(w-z)^2 - s(z)/s(w) (1/(z-w)^2 - s'(z)/(s(z)(z-w))): the argument of Upsilon_w."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    ratio = sqrt_factor(endpoints, z) / sqrt_factor(endpoints, w)
    d = z - w
    return 1.0 / (d * d) - ratio * (1.0 / (d * d) - _log_derivative(endpoints, z) / d)


@dataclass
class CovarianceKernel:
    endpoints: tuple
    theta: float
    contours: ContourSet
    mode: str
    H: object = None
    level: object = 'inner'

    def __post_init__(self):
        self._upsilon = None

    @property
    def upsilon(self):
        if self._upsilon is None:
            self._upsilon = Upsilon(self.endpoints, self.contours.at(self.level))
        return self._upsilon

    def covariance(self, u, v):
        """Limit of Cov(N G_N(u), N G_N(v)) = theta^{-1} C(u, v)."""
        if self.mode == 'one_cut_closed_form':
            (a, b), = self.endpoints
            return kernel_one_cut(u, v, a, b) / self.theta
        return -0.5 * kernel_multi_cut(u, v, self) / self.theta

    def covariance_matrix(self, us, vs):
        us = np.asarray(us, dtype=complex)
        vs = np.asarray(vs, dtype=complex)
        if self.mode == 'one_cut_closed_form':
            (a, b), = self.endpoints
            return kernel_one_cut(us[:, None], vs[None, :], a, b) / self.theta
        return -0.5 * _multi_cut_matrix(self, us, vs) / self.theta


def build_kernel(endpoints, theta=1.0, cores=None, H=None, mode=None, level='inner'):
    """
    Kernel for band endpoints; cores are the segments the contours must enclose (default: the bands).
    `level` picks the contour the loop integrals run over; the kernel does not depend on it.
    """
    endpoints = tuple(tuple(float(x) for x in e) for e in endpoints)
    contours = ContourSet.around(cores or endpoints, level)
    if mode is None:
        mode = 'one_cut_closed_form' if len(endpoints) == 1 else 'multi_cut_upsilon'
    if mode not in ('one_cut_closed_form', 'multi_cut_upsilon'):
        raise ContractViolation(f"unknown kernel mode {mode}")
    if mode == 'one_cut_closed_form' and len(endpoints) != 1:
        raise ContractViolation("the closed-form kernel needs exactly one band")
    return CovarianceKernel(
        endpoints=endpoints, theta=float(theta), contours=contours, mode=mode, H=H, level=contours.level,
    )


def kernel_from_equilibrium(measure, spectral):
    """Kernel whose contours enclose every band and every cell carrying mass."""
    grid = measure.grid
    cores = []
    for i, (alpha, beta) in enumerate(spectral.endpoints):
        occupied = (grid.interval == i) & (measure.density > 0)
        lo = min(alpha, float(grid.lo[occupied].min()))
        hi = max(beta, float(grid.hi[occupied].max()))
        cores.append((lo, hi))
    return build_kernel(spectral.endpoints, measure.theta, cores=cores, H=spectral.H)


def _multi_cut_matrix(kernel, zs, ws):
    """c(z_a, w_b) for all pairs; z and w outside the kernel's contours."""
    contours = kernel.contours.at(kernel.level)
    contours.check_outside(zs)
    contours.check_outside(ws)
    upsilon = kernel.upsilon
    endpoints = kernel.endpoints
    loops = loop_integrals(lambda w: kernel_bracket(endpoints, zs[:, None], w[None, :]), contours)
    coefficients = upsilon.coefficients(loops)
    values = kernel_bracket(endpoints, zs[:, None], ws[None, :])
    if upsilon.k >= 2:
        values = values + upsilon.correction(coefficients[:, None, :], ws[None, :])
    return values


def kernel_multi_cut(z, w, kernel):
    """
    c(z, w) = Upsilon_w[bracket(z, w)] with Upsilon acting in w. Near the diagonal the value is
    Richardson-extrapolated from symmetric offsets in w.
    """
    z_arr, w_arr = np.broadcast_arrays(np.asarray(z, dtype=complex), np.asarray(w, dtype=complex))
    zs, ws = z_arr.ravel(), w_arr.ravel()
    scale = kernel.contours.scale
    out = np.empty(zs.shape, dtype=complex)
    near = np.abs(zs - ws) < DIAGONAL_SWITCH * scale
    for j in range(zs.size):
        if near[j]:
            step = RICHARDSON_STEP * scale
            offsets = np.array([step, -step, 0.5 * step, -0.5 * step])
            row = _multi_cut_matrix(kernel, zs[j:j + 1], ws[j] + offsets)[0]
            wide, narrow = 0.5 * (row[0] + row[1]), 0.5 * (row[2] + row[3])
            out[j] = (4.0 * narrow - wide) / 3.0
        else:
            out[j] = _multi_cut_matrix(kernel, zs[j:j + 1], ws[j:j + 1])[0, 0]
    out = out.reshape(z_arr.shape)
    return complex(out) if out.ndim == 0 else out


def linear_stat_covariance(f, g, kernel, rtol=None, max_nodes=None):
    """
    Limit covariance of sum f(x_i) and sum g(x_i): (1/(2 pi i)^2) double contour integral of
    f(u) g(v) theta^{-1} C(u, v), with u on the outer and v on the middle contours.
    """
    rtol = settings.DBETA_CONTOUR_RTOL if rtol is None else rtol
    max_nodes = settings.DBETA_CONTOUR_MAX_NODES if max_nodes is None else max_nodes
    outer, mid = kernel.contours.at('outer'), kernel.contours.at('mid')

    def evaluate(n):
        u, du = outer.all_nodes(n)
        v, dv = mid.all_nodes(n)
        matrix = kernel.covariance_matrix(u, v)
        left = f(u) * du
        right = g(v) * dv
        total = left @ matrix @ right / (2j * np.pi) ** 2
        scale = float(np.sum(np.abs(left)) * np.max(np.abs(matrix)) * np.sum(np.abs(right))) / (4 * np.pi ** 2)
        return total, scale

    value, n = _adaptive(evaluate, rtol, max_nodes, "linear statistic covariance")
    logger.debug(f"Linear statistic covariance converged with {n} nodes per contour")
    return float(np.real(value))


def kernel_grid(kernel, us, vs):
    """Tidy rows (u_re, u_im, v_re, v_im, c_re, c_im) of the limit covariance."""
    rows = []
    for u in np.atleast_1d(us):
        for v in np.atleast_1d(vs):
            c = complex(kernel.covariance(complex(u), complex(v)))
            rows.append((float(np.real(u)), float(np.imag(u)), float(np.real(v)), float(np.imag(v)), c.real, c.imag))
    return rows


# ──────────────────────────────────────────────
# Mean correction
# ──────────────────────────────────────────────

def _mean_integrand(measure, model, H, z):
    """(psi_minus e^{-theta G} + psi_plus e^{theta G} + theta^2/2 G' phi_minus e^{-theta G}
    + (theta^2/2 - theta) G' phi_plus e^{theta G}) / H."""
    theta = measure.theta
    G = _cell_cauchy(measure, z)
    dG = stieltjes_derivative(measure, z)
    down, up = np.exp(-theta * G), np.exp(theta * G)
    value = model.varphi_minus_N(z) * down + model.varphi_plus_N(z) * up
    value = value + model.phi_minus(z) * down * (0.5 * theta ** 2) * dG
    value = value + model.phi_plus(z) * up * (0.5 * theta ** 2 - theta) * dG
    return value / H(z)


def mean_correction(kernel, measure, model, u, rtol=None, max_nodes=None):
    """
    Limit of N (E G_N(u) - G_mu(u)) at the undeformed measure: Upsilon_u applied to
    theta^{-1}/(2 pi i s(u)) times the contour integral of integrand(z)/(u - z).
    """
    rtol = settings.DBETA_CONTOUR_RTOL if rtol is None else rtol
    max_nodes = settings.DBETA_CONTOUR_MAX_NODES if max_nodes is None else max_nodes
    if kernel.H is None:
        raise ContractViolation("mean correction needs H(z); build the kernel from spectral data")
    endpoints = kernel.endpoints
    inner, mid = kernel.contours.at('inner'), kernel.contours.at('mid')
    theta = measure.theta

    def evaluate_at(targets):
        def evaluate(n):
            z, dz = inner.all_nodes(n)
            weights = _mean_integrand(measure, model, kernel.H, z) * dz
            values = (weights / (targets[..., None] - z)).sum(axis=-1) / (2j * np.pi)
            scale = float(np.sum(np.abs(weights)) / np.min(np.abs(targets[..., None] - z)))
            return values, scale
        integral, _ = _adaptive(evaluate, rtol, max_nodes, "mean correction integral")
        return integral / (theta * sqrt_factor(endpoints, targets))

    u_arr = np.atleast_1d(np.asarray(u, dtype=complex))
    outer_check = mid if len(endpoints) >= 2 else inner
    outer_check.check_outside(u_arr)
    result = evaluate_at(u_arr)
    if len(endpoints) >= 2:
        upsilon = kernel.upsilon
        loops = loop_integrals(lambda s: evaluate_at(s), mid, rtol, max_nodes)
        coefficients = upsilon.coefficients(loops)
        result = result + upsilon.correction(coefficients, u_arr)
    return complex(result[0]) if np.ndim(u) == 0 else result.reshape(np.shape(u))
