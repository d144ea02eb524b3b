"""
Equilibrium measure of the constrained log-gas problem.

Maximizes I_V[rho] = theta * iint ln|x - y| rho(x) rho(y) - int V rho over densities with
0 <= rho <= 1/theta and fixed mass n_i on every interval [a_i, b_i].

The density is piecewise constant on a midpoint grid; the log-kernel is integrated exactly
over pairs of cells, so the discrete functional is a concave quadratic on a product of
capped simplices. It is solved by projected gradient ascent (Barzilai-Borwein steps,
water-filling projection) and polished by a primal-dual active-set KKT solve. Frank-Wolfe
is the fallback when the active-set iteration does not settle.

From the density: G_mu, the effective potential F_V, the band structure, and the spectral
data R_mu, Q_mu, H with branch points alpha_i, beta_i.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import linalg
from scipy.optimize import brentq
from scipy.special import xlogy
from django.conf import settings

from .exceptions import AssumptionViolation, ConfigurationError, EvaluationError, SolverError

logger = logging.getLogger(__name__)

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)
BAND_THRESHOLD = 10.0
EDGE_FIT_CELLS = 4
PROJECTED_GRADIENT_ITER = 3000
PROJECTED_GRADIENT_GAP = 1e-6
ACTIVE_SET_ITER = 60
FRANK_WOLFE_ITER = 2000
CHUNK_ELEMENTS = 2_000_000
PROJECTION_NODES = 512
EXTENSION_NODES = 1024
REFINE_DEPTH = 32
FILLING_MARGIN = 1e-6
H_MARGIN_TOL = 1e-8


# ──────────────────────────────────────────────
# Grid and discretized functional
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class Grid:
    lo: np.ndarray
    hi: np.ndarray
    interval: np.ndarray
    intervals: tuple

    @property
    def midpoints(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def widths(self):
        return self.hi - self.lo

    @property
    def size(self):
        return self.lo.size

    @property
    def spacing(self):
        return float(np.max(self.widths))

    def locate(self, x):
        """Cell index of each x, -1 outside every interval."""
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(self.hi, x, side='left')
        idx = np.clip(idx, 0, self.size - 1)
        inside = (x >= self.lo[idx] - 1e-14) & (x <= self.hi[idx] + 1e-14)
        return np.where(inside, idx, -1)


def build_grid(intervals, grid_size):
    if grid_size < 8 * len(intervals):
        raise ConfigurationError(f"grid_size {grid_size} too small for {len(intervals)} interval(s)")
    lengths = np.array([b - a for a, b in intervals], dtype=np.float64)
    counts = np.maximum(8, np.rint(grid_size * lengths / lengths.sum()).astype(int))
    lo, hi, label = [], [], []
    for i, ((a, b), n) in enumerate(zip(intervals, counts)):
        edges = np.linspace(a, b, n + 1)
        lo.append(edges[:-1])
        hi.append(edges[1:])
        label.append(np.full(n, i))
    return Grid(
        lo=np.concatenate(lo), hi=np.concatenate(hi),
        interval=np.concatenate(label), intervals=tuple((float(a), float(b)) for a, b in intervals),
    )


def refine_grid(grid, edges, depth=REFINE_DEPTH):
    """
    Split the cells around each edge, the cell j steps away into ceil(depth / (j + 1)) equal pieces.
    Returns the refined grid and, per refined cell, the index of the cell it came from.
    """
    splits = np.ones(grid.size, dtype=int)
    for x in edges:
        c = int(grid.locate(x))
        if c < 0:
            continue
        same = grid.interval == grid.interval[c]
        for j in range(depth):
            pieces = -(-depth // (j + 1))
            for idx in (c - j, c + j):
                if 0 <= idx < grid.size and same[idx]:
                    splits[idx] = max(splits[idx], pieces)
    owner = np.repeat(np.arange(grid.size), splits)
    offset = np.arange(owner.size) - np.repeat(np.cumsum(splits) - splits, splits)
    width = grid.widths[owner] / splits[owner]
    lo = grid.lo[owner] + offset * width
    hi = np.where(offset == splits[owner] - 1, grid.hi[owner], lo + width)
    refined = Grid(lo=lo, hi=hi, interval=grid.interval[owner], intervals=grid.intervals)
    return refined, owner


def _first_antiderivative(t):
    """G1' = ln|t|."""
    return xlogy(t, np.abs(t)) - t


def _second_antiderivative(t):
    """G2'' = ln|t|."""
    return 0.5 * xlogy(t * t, np.abs(t)) - 0.75 * t * t


def log_kernel_matrix(grid):
    """K_jk = double integral of ln|x - y| over cell j times cell k."""
    G2 = _second_antiderivative
    lo, hi = grid.lo, grid.hi
    return -(
        G2(hi[:, None] - hi[None, :]) - G2(hi[:, None] - lo[None, :])
        - G2(lo[:, None] - hi[None, :]) + G2(lo[:, None] - lo[None, :])
    )


def _cell_nodes(grid, mask=None):
    mask = np.ones(grid.size, dtype=bool) if mask is None else mask
    half = 0.5 * grid.widths[mask]
    return grid.midpoints[mask][:, None] + half[:, None] * GAUSS_NODES[None, :]


def cell_averages(grid, f):
    return f(_cell_nodes(grid)) @ GAUSS_WEIGHTS / 2.0


def cell_potential(model, grid):
    """Cell averages of V (with the interval gauge constants)."""
    out = np.empty(grid.size)
    for i in range(len(grid.intervals)):
        mask = grid.interval == i
        values = model.interval_potential(_cell_nodes(grid, mask), i)
        out[mask] = values @ GAUSS_WEIGHTS / 2.0
    return out


class _Problem:
    """Discrete functional J(mu) = theta mu.K.mu - v.mu with per-interval masses."""

    def __init__(self, grid, kernel, potential, theta, fillings):
        self.grid = grid
        self.K = kernel
        self.h = grid.widths
        self.v = self.h * potential
        self.theta = theta
        self.cap = 1.0 / theta
        self.fillings = np.asarray(fillings, dtype=np.float64)
        self.label = grid.interval
        self.k = len(grid.intervals)
        self.masks = [self.label == i for i in range(self.k)]

    def objective(self, mu):
        return float(self.theta * mu @ (self.K @ mu) - self.v @ mu)

    def gradient(self, mu):
        """Discretized F_V: cell average of 2 theta int ln|x-y| mu(y) dy - V(x)."""
        return (2.0 * self.theta * (self.K @ mu) - self.v) / self.h

    def masses(self, mu):
        return np.bincount(self.label, weights=self.h * mu, minlength=self.k)

    def project(self, y):
        out = np.empty_like(y)
        for i, mask in enumerate(self.masks):
            out[mask] = _project_capped(y[mask], self.fillings[i], self.cap, self.h[mask])
        return out

    def uniform_start(self):
        mu = np.empty(self.grid.size)
        for i, mask in enumerate(self.masks):
            mu[mask] = self.fillings[i] / self.h[mask].sum()
        return mu

    def random_start(self, rng):
        return self.project(rng.uniform(0.0, self.cap, self.grid.size))

    def solve_free(self, free, upper):
        F = np.flatnonzero(free)
        U = np.flatnonzero(upper)
        nF, k = F.size, self.k
        E = np.zeros((nF, k))
        E[np.arange(nF), self.label[F]] = self.h[F]
        A = np.zeros((nF + k, nF + k))
        A[:nF, :nF] = 2.0 * self.theta * self.K[np.ix_(F, F)]
        A[:nF, nF:] = -E
        A[nF:, :nF] = E.T
        rhs = np.empty(nF + k)
        rhs[:nF] = self.v[F] - 2.0 * self.theta * self.cap * self.K[np.ix_(F, U)].sum(axis=1)
        saturated_mass = np.bincount(self.label[U], weights=self.h[U], minlength=k) * self.cap
        rhs[nF:] = self.fillings - saturated_mass
        solution = linalg.solve(A, rhs)
        mu = np.zeros(self.grid.size)
        mu[U] = self.cap
        mu[F] = solution[:nF]
        return mu, solution[nF:]

    def multipliers(self, mu, free):
        """Per-interval f_i as the mean of F_V over free cells."""
        r = self.gradient(mu)
        f = np.zeros(self.k)
        for i, mask in enumerate(self.masks):
            sel = mask & free
            f[i] = r[sel].mean() if np.any(sel) else r[mask].max()
        return f

    def kkt_residual(self, mu, f, lower, upper):
        r = self.gradient(mu) - f[self.label]
        free = ~(lower | upper)
        parts = [
            np.max(np.abs(r[free]), initial=0.0),
            np.max(r[lower], initial=0.0),
            np.max(-r[upper], initial=0.0),
            np.max(-mu, initial=0.0),
            np.max(mu - self.cap, initial=0.0),
            np.max(np.abs(self.masses(mu) - self.fillings)),
        ]
        return float(max(parts))


def _project_capped(y, target, cap, weights):
    """Projection of y onto {0 <= x <= cap, sum(w x) = target} in the w-weighted norm (water-filling)."""
    def excess(tau):
        return weights @ np.clip(y - tau, 0.0, cap) - target

    tau = brentq(excess, y.min() - cap, y.max(), xtol=1e-15)
    shifted = y - tau
    free = (shifted > 0) & (shifted < cap)
    if np.any(free):
        upper = shifted >= cap
        tau = (weights[free] @ y[free] + cap * weights[upper].sum() - target) / weights[free].sum()
    return np.clip(y - tau, 0.0, cap)


class _NotConverged(Exception):
    pass


def _projected_gradient(problem, mu, max_iter, tol):
    h = problem.h
    g = problem.gradient(mu)
    row = np.abs(problem.K).sum(axis=1) / h
    step0 = 1.0 / (2.0 * problem.theta * row.max())
    step = step0
    gap = np.inf
    for it in range(1, max_iter + 1):
        new = problem.project(mu + step * g)
        move = new - mu
        gap = float(np.max(np.abs(move)) / step)
        g_new = problem.gradient(new)
        curvature = -float(np.dot(h * move, g_new - g))
        if curvature > 0:
            step = float(np.clip(np.dot(h * move, move) / curvature, step0 * 1e-3, step0 * 1e8))
        mu, g = new, g_new
        if it % 1000 == 0:
            logger.info(f"  Projected gradient: iteration {it}, gap {gap:.3e}")
        if gap < tol:
            break
    return mu, it, gap


def _frank_wolfe(problem, mu, iterations):
    """Conditional-gradient ascent with exact line search."""
    h = problem.h
    for _ in range(iterations):
        r = problem.gradient(mu)
        vertex = np.zeros_like(mu)
        for i, mask in enumerate(problem.masks):
            idx = np.flatnonzero(mask)
            order = idx[np.argsort(-r[idx], kind='stable')]
            remaining = problem.fillings[i]
            for j in order:
                take = min(problem.cap, remaining / h[j])
                vertex[j] = take
                remaining -= take * h[j]
                if remaining <= 0:
                    break
        d = vertex - mu
        slope = float(np.dot(h * r, d))
        curvature = -2.0 * problem.theta * float(d @ (problem.K @ d))
        if slope <= 0 or curvature <= 0:
            break
        mu = mu + min(1.0, slope / curvature) * d
    return mu


def _active_set(problem, mu):
    """Primal-dual active-set iteration from the bounds that mu touches."""
    bound_tol = 1e-9 * problem.cap
    lower = mu <= bound_tol
    upper = mu >= problem.cap - bound_tol
    for it in range(1, ACTIVE_SET_ITER + 1):
        free = ~(lower | upper)
        for mask in problem.masks:
            if not np.any(free & mask):
                raise _NotConverged("interval without free cells")
        try:
            mu, f = problem.solve_free(free, upper)
        except (linalg.LinAlgError, ValueError) as e:
            raise _NotConverged(str(e))
        r = problem.gradient(mu) - f[problem.label]
        new_lower = (free & (mu < 0)) | (lower & (r <= 0))
        new_upper = (free & (mu > problem.cap)) | (upper & (r >= 0))
        if np.array_equal(new_lower, lower) and np.array_equal(new_upper, upper):
            return mu, f, lower, upper, it
        lower, upper = new_lower, new_upper
    raise _NotConverged(f"active set still changing after {ACTIVE_SET_ITER} iterations")


# ──────────────────────────────────────────────
# Equilibrium measure
# ──────────────────────────────────────────────

@dataclass
class EquilibriumMeasure:
    grid: Grid
    density: np.ndarray
    fillings: tuple
    lagrange_constants: tuple
    theta: float
    model: object = field(repr=False)
    labels: np.ndarray = field(repr=False, default=None)
    bands: list = field(default_factory=list)
    voids: list = field(default_factory=list)
    saturated: list = field(default_factory=list)
    band_counts: list = field(default_factory=list)
    kkt_residual: float = 0.0
    iterations: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.grid.spacing

    @property
    def support(self):
        """Hull of the cells carrying mass."""
        occupied = self.density > 0
        return float(self.grid.lo[occupied].min()), float(self.grid.hi[occupied].max())


def _resolve_fillings(model, fillings, intervals):
    if fillings is None:
        fillings = getattr(model, 'fill_hat', None)
    if fillings is None:
        fillings = (1.0,) if len(intervals) == 1 else model.filling_fractions
    fillings = tuple(float(n) for n in fillings)
    if len(fillings) != len(intervals):
        raise ConfigurationError(f"{len(fillings)} filling fractions for {len(intervals)} intervals")
    if abs(sum(fillings) - 1.0) > 1e-9:
        raise ConfigurationError(f"filling fractions must sum to 1, got {sum(fillings)}")
    for (a, b), n in zip(intervals, fillings):
        capacity = (b - a) / model.theta
        if not FILLING_MARGIN < n < capacity - FILLING_MARGIN:
            raise ConfigurationError(f"filling {n} on [{a}, {b}] must lie inside (0, {capacity:.6g})")
    return fillings


def _solve_on_grid(model, grid, fillings, max_iter, tol, mu=None, rng=None):
    theta = model.theta
    problem = _Problem(grid, log_kernel_matrix(grid), cell_potential(model, grid), theta, fillings)
    if mu is not None:
        mu = problem.project(mu)
    else:
        mu = problem.uniform_start() if rng is None else problem.random_start(rng)

    mu, pg_iter, gap = _projected_gradient(problem, mu, min(max_iter, PROJECTED_GRADIENT_ITER), PROJECTED_GRADIENT_GAP)
    diagnostics = {'projected_gradient_iterations': pg_iter, 'projected_gradient_gap': gap}
    try:
        mu, f, lower, upper, as_iter = _active_set(problem, mu)
    except _NotConverged as e:
        logger.warning(f"Active-set polish did not settle ({e}); falling back to Frank-Wolfe")
        mu = _frank_wolfe(problem, mu, min(max_iter, FRANK_WOLFE_ITER))
        try:
            mu, f, lower, upper, as_iter = _active_set(problem, mu)
        except _NotConverged as e2:
            free = (mu > 0) & (mu < problem.cap)
            f = problem.multipliers(mu, free)
            residual = problem.kkt_residual(mu, f, mu <= 0, mu >= problem.cap)
            diagnostics.update({'kkt_residual': residual, 'reason': str(e2), 'objective': problem.objective(mu)})
            raise SolverError(f"equilibrium solver did not converge: {e2}", diagnostics)
        diagnostics['frank_wolfe'] = True

    residual = problem.kkt_residual(mu, f, lower, upper)
    diagnostics.update({'active_set_iterations': as_iter, 'kkt_residual': residual})
    if residual > tol:
        raise SolverError(f"KKT residual {residual:.3e} above tolerance {tol:.1e}", diagnostics)
    logger.info(f"Equilibrium converged on {grid.size} cells: KKT residual {residual:.3e}, {as_iter} active-set iteration(s)")

    measure = EquilibriumMeasure(
        grid=grid, density=mu, fillings=fillings, lagrange_constants=tuple(float(c) for c in f),
        theta=theta, model=model, kkt_residual=residual, iterations=diagnostics,
    )
    _classify(measure)
    return measure


def _interior_edges(measure):
    """Band endpoints that are transitions inside an interval rather than interval walls."""
    margin = measure.grid.spacing
    edges = []
    for x in (e for band in measure.bands for e in band):
        inside = [(a, b) for a, b in measure.grid.intervals if a - margin <= x <= b + margin]
        if inside and all(a + margin < x < b - margin for a, b in inside):
            edges.append(x)
    return edges


def solve_equilibrium(model, fillings=None, grid_size=2000, max_iter=None, tol=None, rng=None, refine=True):
    """
    Maximizer of the discretized I_V; raises SolverError with diagnostics when the KKT
    residual stays above tol. rng, when given, draws a random feasible starting density.

    With refine, the uniform solution locates the band/void/saturation transitions and the
    problem is solved again on a grid graded towards them, warm-started from the first pass.
    """
    max_iter = settings.DBETA_SOLVER_MAX_ITER if max_iter is None else max_iter
    tol = settings.DBETA_SOLVER_TOL if tol is None else tol
    intervals = tuple(model.support_hint)
    fillings = _resolve_fillings(model, fillings, intervals)

    grid = build_grid(intervals, grid_size)
    logger.info(f"Solving equilibrium for {model.name}: {grid.size} cells, theta={model.theta}")
    measure = _solve_on_grid(model, grid, fillings, max_iter, tol, rng=rng)

    edges = _interior_edges(measure) if refine else []
    if not edges:
        return measure
    fine, owner = refine_grid(grid, edges)
    logger.info(f"Refining around {len(edges)} transition(s): {grid.size} -> {fine.size} cells")
    coarse_iterations = dict(measure.iterations)
    measure = _solve_on_grid(model, fine, fillings, max_iter, tol, mu=measure.density[owner])
    measure.iterations['coarse'] = coarse_iterations
    measure.iterations['refined_edges'] = [float(x) for x in edges]
    return measure


# ──────────────────────────────────────────────
# Band structure
# ──────────────────────────────────────────────

def _runs(labels):
    start = 0
    for j in range(1, labels.size + 1):
        if j == labels.size or labels[j] != labels[start]:
            yield labels[start], start, j - 1
            start = j


def _refine_edge(grid, mu, cells, cap, kind, side):
    """Extrapolate the band edge from the square-root profile next to a void or saturated run."""
    x = grid.midpoints[cells]
    values = mu[cells] ** 2 if kind == 'void' else (cap - mu[cells]) ** 2
    slope, intercept = np.polyfit(x, values, 1)
    guess = grid.lo[cells[0]] if side == 'left' else grid.hi[cells[-1]]
    if slope == 0:
        return float(guess)
    edge = -intercept / slope
    window = BAND_THRESHOLD * 2 * grid.spacing
    return float(np.clip(edge, guess - window, guess + window))


def _classify(measure):
    """Label cells void / saturated / band and collect the runs of each kind per interval."""
    grid, mu = measure.grid, measure.density
    cap = 1.0 / measure.theta
    threshold = BAND_THRESHOLD * grid.spacing
    labels = np.where(mu < threshold, 'void', np.where(mu > cap - threshold, 'saturated', 'band'))
    measure.labels = labels

    bands, voids, saturated, counts = [], [], [], []
    for i in range(len(grid.intervals)):
        cells = np.flatnonzero(grid.interval == i)
        runs = list(_runs(labels[cells]))
        edges = {}
        for r, (kind, s, e) in enumerate(runs):
            if kind != 'band':
                continue
            band_cells = cells[s:e + 1]
            alpha, beta = float(grid.lo[band_cells[0]]), float(grid.hi[band_cells[-1]])
            if band_cells.size >= 2:
                if r > 0:
                    alpha = _refine_edge(grid, mu, band_cells[:EDGE_FIT_CELLS], cap, runs[r - 1][0], 'left')
                if r < len(runs) - 1:
                    beta = _refine_edge(grid, mu, band_cells[-EDGE_FIT_CELLS:], cap, runs[r + 1][0], 'right')
            edges[r] = (alpha, beta)
            bands.append((alpha, beta))
        for r, (kind, s, e) in enumerate(runs):
            if kind == 'band':
                continue
            lo = edges[r - 1][1] if r - 1 in edges else float(grid.lo[cells[s]])
            hi = edges[r + 1][0] if r + 1 in edges else float(grid.hi[cells[e]])
            (voids if kind == 'void' else saturated).append((lo, hi))
        counts.append(len(edges))
    measure.bands, measure.voids, measure.saturated = bands, voids, saturated
    measure.band_counts = counts


# ──────────────────────────────────────────────
# Evaluators
# ──────────────────────────────────────────────

def _cell_cauchy(measure, z):
    """sum_j mu_j (log(z - lo_j) - log(z - hi_j)) = G_mu(z) for piecewise constant mu."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    keep = measure.density != 0
    lo, hi, mu = measure.grid.lo[keep], measure.grid.hi[keep], measure.density[keep]
    out = np.empty(flat.shape, dtype=complex)
    chunk = max(1, CHUNK_ELEMENTS // max(1, mu.size))
    for s in range(0, flat.size, chunk):
        block = flat[s:s + chunk, None]
        out[s:s + chunk] = (np.log(block - lo) - np.log(block - hi)) @ mu
    return out.reshape(z.shape)


def stieltjes_derivative(measure, z):
    """d/dz G_mu(z) off the support."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    keep = measure.density != 0
    lo, hi, mu = measure.grid.lo[keep], measure.grid.hi[keep], measure.density[keep]
    out = np.empty(flat.shape, dtype=complex)
    chunk = max(1, CHUNK_ELEMENTS // max(1, mu.size))
    for s in range(0, flat.size, chunk):
        block = flat[s:s + chunk, None]
        out[s:s + chunk] = (1.0 / (block - lo) - 1.0 / (block - hi)) @ mu
    return out.reshape(z.shape)


def stieltjes(measure, z):
    """G_mu(z) = int mu(x) dx / (z - x)."""
    z_arr = np.asarray(z, dtype=complex)
    lo, hi = measure.support
    half = 0.5 * measure.h
    close = (np.abs(z_arr.imag) < half) & (z_arr.real > lo - half) & (z_arr.real < hi + half)
    if np.any(close):
        raise EvaluationError(f"z within h/2 = {half:.3e} of the support [{lo:.6g}, {hi:.6g}]")
    values = _cell_cauchy(measure, z_arr)
    return complex(values) if values.ndim == 0 else values


def boundary_values(measure, x, side=1):
    """G_mu(x + i0) for side=1, G_mu(x - i0) for side=-1."""
    x = np.asarray(x, dtype=np.float64)
    keep = measure.density != 0
    lo, hi, mu = measure.grid.lo[keep], measure.grid.hi[keep], measure.density[keep]
    real = np.empty(x.shape)
    flat = x.ravel()
    chunk = max(1, CHUNK_ELEMENTS // max(1, mu.size))
    out = real.ravel()
    for s in range(0, flat.size, chunk):
        block = flat[s:s + chunk, None]
        out[s:s + chunk] = (np.log(np.abs(block - lo)) - np.log(np.abs(block - hi))) @ mu
    return out.reshape(x.shape) - 1j * side * np.pi * density_at(measure, x)


def density_at(measure, x):
    idx = measure.grid.locate(x)
    return np.where(idx >= 0, measure.density[np.maximum(idx, 0)], 0.0)


def integrate(measure, f):
    """int f(x) mu(x) dx with 8-point Gauss-Legendre per cell."""
    values = cell_averages(measure.grid, f)
    return float(np.sum(measure.density * measure.grid.widths * values))


def effective_potential(measure, x):
    """F_V(x) = 2 theta int ln|x - y| mu(y) dy - V(x), with V the interval potential at x."""
    x = np.asarray(x, dtype=np.float64)
    grid = measure.grid
    idx = grid.locate(x)
    if np.any(idx < 0):
        raise ConfigurationError("effective potential is defined on the union of the intervals only")
    G1 = _first_antiderivative
    flat = x.ravel()
    log_part = (G1(flat[:, None] - grid.lo) - G1(flat[:, None] - grid.hi)) @ measure.density
    V = np.empty(flat.shape)
    labels = grid.interval[idx.ravel()]
    for i in np.unique(labels):
        sel = labels == i
        V[sel] = measure.model.interval_potential(flat[sel], int(i))
    values = (2.0 * measure.theta * log_part - V).reshape(x.shape)
    return float(values) if values.ndim == 0 else values


def krawtchouk_density(m, x):
    """Closed-form limit density of the binomial ensemble at theta = 1, arccot taking values in (0, pi)."""
    x = np.asarray(x, dtype=np.float64)
    radius2 = m - 1.0 - (x - 0.5 * m) ** 2
    inside = radius2 > 0
    with np.errstate(divide='ignore', invalid='ignore'):
        y = (m - 2.0) / (2.0 * np.sqrt(np.where(inside, radius2, 1.0)))
    band = (0.5 * np.pi - np.arctan(y)) / np.pi
    outer = np.where(np.abs(x - 0.5 * m) <= 0.5 * m, 1.0, 0.0) if m < 2 else 0.0
    return np.where(inside, band, outer)


def krawtchouk_reference_error(measure, m):
    """Sup distance between the cell densities and the cell averages of krawtchouk_density, overall and on band cells."""
    reference = cell_averages(measure.grid, lambda x: krawtchouk_density(m, x))
    error = np.abs(measure.density - reference)
    band = measure.labels == 'band'
    return {
        'sup_error': float(error.max()),
        'band_sup_error': float(error[band].max()) if np.any(band) else 0.0,
    }


def density_rows(measure):
    """(x, mu, band_label) per cell for CSV export."""
    return [
        (float(x), float(m), str(label))
        for x, m, label in zip(measure.grid.midpoints, measure.density, measure.labels)
    ]


# ──────────────────────────────────────────────
# Spectral data
# ──────────────────────────────────────────────

def _real_coefficients(poly):
    return Polynomial(np.real(np.asarray(poly.coef, dtype=complex)))


def project_polynomial(fn, center, radius, degree, nodes=PROJECTION_NODES):
    """Nonnegative Laurent coefficients of fn on a circle, as a Polynomial of the given degree."""
    t = 2.0 * np.pi * np.arange(nodes) / nodes
    values = fn(center + radius * np.exp(1j * t))
    coefs = np.fft.fft(values)[:degree + 1] / nodes / radius ** np.arange(degree + 1)
    shifted = Polynomial(np.real(coefs), domain=[center - 1.0, center + 1.0], window=[-1.0, 1.0])
    return shifted.convert()


def sqrt_factor(endpoints, z):
    """prod_i sqrt((z - alpha_i)(z - beta_i)), principal branches in (z - mid)/halfwidth, ~ z^k at infinity."""
    z = np.asarray(z, dtype=complex)
    out = np.ones(z.shape, dtype=complex)
    for alpha, beta in endpoints:
        mid, hw = 0.5 * (alpha + beta), 0.5 * (beta - alpha)
        w = (z - mid) / hw
        out = out * hw * np.sqrt(w - 1.0) * np.sqrt(w + 1.0)
    return out


@dataclass
class SpectralData:
    measure: EquilibriumMeasure
    model: object
    endpoints: tuple
    R_poly: Polynomial = None
    extension: tuple = None
    h_margin: float = None

    def G(self, z):
        return _cell_cauchy(self.measure, z)

    def R_direct(self, z):
        z = np.asarray(z, dtype=complex)
        theta = self.measure.theta
        G = self.G(z)
        return self.model.phi_minus(z) * np.exp(-theta * G) + self.model.phi_plus(z) * np.exp(theta * G)

    def R_mu(self, z):
        z = np.asarray(z, dtype=complex)
        if self.R_poly is not None:
            return self.R_poly(z)
        return self._extended(z)

    def _extended(self, z):
        """Cauchy-integral continuation of R_mu inside an ellipse around the support."""
        center, hw, rho, nodes, values, dz = self.extension
        w = (z - center) / hw
        inside = np.abs(w - 1.0) + np.abs(w + 1.0) < 2.0 * np.cosh(rho) * 0.98
        out = np.empty(z.shape, dtype=complex)
        if np.any(~inside):
            out[~inside] = self.R_direct(z[~inside])
        if np.any(inside):
            zi = z[inside]
            out[inside] = (values * dz / (nodes[None, :] - zi[..., None])).sum(axis=-1) / (2j * np.pi)
        return out

    def Q_squared(self, z):
        z = np.asarray(z, dtype=complex)
        return self.R_mu(z) ** 2 - 4.0 * self.model.phi_plus(z) * self.model.phi_minus(z)

    def Q_mu(self, z):
        """sqrt(R^2 - 4 phi_plus phi_minus) on the branch of phi_minus e^{-theta G} - phi_plus e^{theta G}."""
        z = np.asarray(z, dtype=complex)
        theta = self.measure.theta
        root = np.sqrt(self.Q_squared(z))
        G = self.G(z)
        direct = self.model.phi_minus(z) * np.exp(-theta * G) - self.model.phi_plus(z) * np.exp(theta * G)
        flip = np.real(np.conj(root) * direct) < 0
        return np.where(flip, -root, root)

    def sqrt_factor(self, z):
        return sqrt_factor(self.endpoints, z)

    def H(self, z):
        return self.Q_mu(z) / self.sqrt_factor(z)


def _extension_data(spectral, lo, hi):
    center, hw = 0.5 * (lo + hi), 0.5 * (hi - lo) * 1.05
    rho = np.arccosh(1.6)
    t = 2.0 * np.pi * np.arange(EXTENSION_NODES) / EXTENSION_NODES
    nodes = center + hw * np.cosh(rho + 1j * t)
    dz = 1j * hw * np.sinh(rho + 1j * t) * (2.0 * np.pi / EXTENSION_NODES)
    values = spectral.R_direct(nodes)
    return center, hw, rho, nodes, values, dz


def _nearest_root(candidates, estimate, window):
    if candidates.size == 0:
        return None
    j = np.argmin(np.abs(candidates - estimate))
    return float(candidates[j]) if abs(candidates[j] - estimate) <= window else None


def _branch_points(spectral, measure):
    h = measure.h
    refined = []
    if spectral.R_poly is not None:
        plus, minus = spectral.model.polynomial.limit_polynomials()
        q2 = spectral.R_poly ** 2 - 4.0 * plus * minus
        scale = np.max(np.abs(q2.coef))
        q2 = q2.trim(tol=1e-12 * scale)
        roots = q2.roots()
        real = np.sort(np.real(roots[np.abs(np.imag(roots)) <= 1e-7 * max(1.0, np.max(np.abs(roots)))]))

        def locate(estimate, window):
            return _nearest_root(real, estimate, window)
    else:
        def q2_real(x):
            return float(np.real(spectral.Q_squared(np.array([x + 0j]))[0]))

        def locate(estimate, window):
            xs = np.linspace(estimate - window, estimate + window, 201)
            values = np.array([q2_real(x) for x in xs])
            changes = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)
            if changes.size == 0:
                return None
            j = changes[np.argmin(np.abs(xs[changes] - estimate))]
            if values[j] == 0:
                return float(xs[j])
            return float(brentq(q2_real, xs[j], xs[j + 1], xtol=1e-14))

    for alpha, beta in measure.bands:
        window = max(25 * h, 0.05 * (beta - alpha))
        pair = []
        for estimate in (alpha, beta):
            root = locate(estimate, window)
            if root is None:
                logger.warning(f"No sign change of Q_mu^2 near {estimate:.6g}; keeping the grid estimate")
                root = estimate
            pair.append(root)
        refined.append(tuple(pair))
    return tuple(refined)


def spectral_data(measure, model):
    """R_mu, Q_mu, H and the band endpoints; raises AssumptionViolation when H vanishes on the intervals."""
    if any(count != 1 for count in measure.band_counts):
        raise AssumptionViolation(
            f"bands per interval {measure.band_counts}; exactly one band per interval is supported"
        )
    lo = min(a for a, _ in measure.grid.intervals)
    hi = max(b for _, b in measure.grid.intervals)
    spectral = SpectralData(measure=measure, model=model, endpoints=tuple(measure.bands))

    if model.polynomial is not None:
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        spectral.R_poly = project_polynomial(
            spectral.R_direct, center, 2.0 * half + 1.0, model.polynomial.degree
        )
    else:
        spectral.extension = _extension_data(spectral, lo, hi)

    spectral.endpoints = _branch_points(spectral, measure)

    scan = measure.grid.midpoints + 0j
    magnitude = np.abs(spectral.H(scan))
    spectral.h_margin = float(np.min(magnitude))
    if not spectral.h_margin > H_MARGIN_TOL * max(1.0, float(np.max(magnitude))):
        raise AssumptionViolation(f"H vanishes on the intervals (min |H| = {spectral.h_margin:.3e})")
    logger.info(f"Spectral data: endpoints {spectral.endpoints}, min |H| on the intervals {spectral.h_margin:.6g}")
    return spectral


def band_report(measure, spectral=None):
    report = {
        'preset': measure.model.name,
        'theta': measure.theta,
        'grid_size': int(measure.grid.size),
        'fillings': list(measure.fillings),
        'lagrange_constants': list(measure.lagrange_constants),
        'bands': [list(b) for b in measure.bands],
        'voids': [list(v) for v in measure.voids],
        'saturated': [list(s) for s in measure.saturated],
        'kkt_residual': measure.kkt_residual,
        'iterations': dict(measure.iterations),
    }
    if spectral is not None:
        report['endpoints'] = [list(e) for e in spectral.endpoints]
        report['h_margin'] = spectral.h_margin
        if spectral.R_poly is not None:
            report['R_mu_coefficients'] = [float(c) for c in spectral.R_poly.coef]
    return report
