"""Coefficient fields and the analysis toolkit used by the stability bounds.

Contents: coefficient containers, mollification, the centred maximal
function on a radius ladder, the pointwise Sobolev check, the singular
kernel integral over the ball spanned by two points, space-time norms,
Osgood moduli with their auxiliary cost ``psi_delta``, and convex
integrability witnesses ``G`` with the modulus ``phi(delta)``.
"""

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, ndimage, optimize
from scipy.interpolate import CubicHermiteSpline

from . import _kernels
from .measures import grid_lr_norm


@dataclass(frozen=True)
class CoefficientField:
    """Time-dependent drift and diffusion factor.

    Parameters
    ----------
    drift : callable
        ``drift(t, x)`` maps ``x`` of shape ``(n, d)`` to ``(n, d)``.
    diffusion : callable
        ``diffusion(t, x)`` maps ``x`` of shape ``(n, d)`` to ``(n, d, m)``.
    dim, noise_dim : int
    horizon : float
    exponents : dict
        Declared integrability exponents, e.g. ``{"p": 2}``.
    lipschitz : float, optional
        Declared Lipschitz constant of the drift.
    name : str
    autonomous : bool
        True when neither coefficient depends on time.
    """

    drift: object
    diffusion: object
    dim: int = 1
    noise_dim: int = 1
    horizon: float = 1.0
    exponents: dict = field(default_factory=dict)
    lipschitz: float = None
    name: str = "field"
    autonomous: bool = True

    def b(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.asarray(self.drift(t, x), dtype=float).reshape(x.shape[0], self.dim)

    def sigma(self, t, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        out = np.asarray(self.diffusion(t, x), dtype=float)
        return np.broadcast_to(out, (x.shape[0], self.dim, self.noise_dim))

    def a(self, t, x):
        s = self.sigma(t, x)
        return np.einsum("nik,njk->nij", s, s)

    def with_drift(self, drift, name=None):
        return CoefficientField(drift, self.diffusion, self.dim, self.noise_dim, self.horizon,
                                dict(self.exponents), None, name or self.name, self.autonomous)


def constant_diffusion(value, dim=1, noise_dim=None):
    """Diffusion factor equal to ``value`` times the identity (or a given matrix)."""
    mat = np.asarray(value, dtype=float)
    if mat.ndim == 0:
        mat = mat * np.eye(dim, noise_dim or dim)

    def diffusion(t, x):
        return np.broadcast_to(mat, (x.shape[0],) + mat.shape)

    return diffusion


def check_lipschitz(field, t, points, rng=None, pairs=2000):
    """Largest sampled difference quotient of the drift."""
    rng = np.random.default_rng(0) if rng is None else rng
    pts = np.asarray(points, dtype=float).reshape(-1, field.dim)
    i = rng.integers(0, len(pts), pairs)
    j = rng.integers(0, len(pts), pairs)
    keep = np.any(pts[i] != pts[j], axis=1)
    x, y = pts[i[keep]], pts[j[keep]]
    num = np.linalg.norm(field.b(t, x) - field.b(t, y), axis=1)
    den = np.linalg.norm(x - y, axis=1)
    return float(np.max(num / den)) if len(den) else 0.0


def grid_gradient(values, grid):
    """Centred finite-difference gradient; returns shape ``(d,) + grid.shape``."""
    values = np.asarray(values, dtype=float)
    grads = np.gradient(values, *grid.spacing, axis=tuple(range(values.ndim - grid.dim, values.ndim)))
    if grid.dim == 1:
        grads = [grads]
    return np.stack(grads, axis=0)


def sample_drift(field, grid, t):
    """Drift on grid cell centres, shape ``(d,) + grid.shape``."""
    vals = field.b(t, grid.points())
    return np.moveaxis(vals, 1, 0).reshape((field.dim,) + grid.shape)


def sample_sigma(field, grid, t):
    """Diffusion factor on grid cells, shape ``(d, m) + grid.shape``."""
    vals = field.sigma(t, grid.points())
    return np.moveaxis(vals, 0, -1).reshape((field.dim, field.noise_dim) + grid.shape)


def drift_gradient_magnitude(field, grid, t):
    """Frobenius norm of the drift Jacobian on the grid."""
    b = sample_drift(field, grid, t)
    jac = np.stack([grid_gradient(b[k], grid) for k in range(field.dim)])
    return np.sqrt(np.sum(jac ** 2, axis=(0, 1)))


def sigma_gradient_magnitude(field, grid, t):
    """Frobenius norm of the derivative of the diffusion factor on the grid."""
    s = sample_sigma(field, grid, t)
    total = np.zeros(grid.shape)
    for i in range(field.dim):
        for k in range(field.noise_dim):
            total += np.sum(grid_gradient(s[i, k], grid) ** 2, axis=0)
    return np.sqrt(total)


# Mollification --------------------------------------------------------------

def bump(r):
    """Unnormalised bump ``exp(-1 / (1 - r^2))`` on ``|r| < 1``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_mass(dim):
    if dim == 1:
        return integrate.quad(lambda r: bump(np.array(r)).item(), -1, 1, epsabs=1e-14)[0]
    return 2 * math.pi * integrate.quad(lambda r: r * bump(np.array(r)).item(), 0, 1, epsabs=1e-14)[0]


def mollifier_abs_moment():
    """First absolute moment of the unit-mass 1D mollifier profile."""
    num = integrate.quad(lambda r: abs(r) * bump(np.array(r)).item(), -1, 1, epsabs=1e-14)[0]
    return num / _bump_mass(1)


def mollifier_kernel(grid, eps):
    """Tabulated mollifier on grid offsets with unit discrete mass."""
    h = grid.spacing
    half = [int(math.floor(eps / hk)) for hk in h]
    offs = np.meshgrid(*[np.arange(-k, k + 1) * hk for k, hk in zip(half, h)], indexing="ij")
    r = np.sqrt(sum(o ** 2 for o in offs)) / eps
    ker = bump(r)
    total = ker.sum() * grid.cell_volume
    if total == 0:
        ker = np.zeros_like(ker)
        ker[tuple(k for k in half)] = 1.0
        total = grid.cell_volume
    return ker / total


def mollify(values, grid, eps):
    """Convolve grid samples with the unit-mass bump of radius ``eps``.

    Values outside the box are taken as zero, so nonnegative inputs keep
    their mass up to what the kernel pushes across the boundary.
    Leading axes beyond the grid shape are treated as components.
    """
    if eps <= min(grid.spacing):
        warnings.warn("mollifier radius does not exceed the grid spacing", RuntimeWarning)
    values = np.asarray(values, dtype=float)
    ker = mollifier_kernel(grid, eps) * grid.cell_volume
    if values.shape == tuple(grid.shape):
        return ndimage.convolve(values, ker, mode="constant", cval=0.0)
    lead = values.shape[:values.ndim - grid.dim]
    flat = values.reshape((-1,) + tuple(grid.shape))
    out = np.stack([ndimage.convolve(v, ker, mode="constant", cval=0.0) for v in flat])
    return out.reshape(lead + tuple(grid.shape))


# Maximal function ------------------------------------------------------------

def radius_ladder(grid, ratio=1.3):
    """Geometric radii from half a cell up to the box diameter."""
    r0 = 0.5 * min(grid.spacing)
    n = int(math.ceil(math.log(grid.diameter / r0) / math.log(ratio))) + 1
    return r0 * ratio ** np.arange(n + 1)


def maximal_function(values, grid, radii=None, ratio=1.3):
    """Centred maximal function of ``|f|`` over a finite radius ladder.

    In 1D the ball averages are exact for the piecewise-constant extension
    of ``f`` (zero outside the box). In 2D the ball of radius ``r`` is the
    set of lattice cells whose centres lie within ``r``; lattice positions
    outside the box contribute zeros to the average.

    Parameters
    ----------
    values : ndarray
        Samples of ``f`` with the grid shape.
    grid : BoxGrid
    radii : array_like, optional
        Radii to scan; defaults to :func:`radius_ladder`.
    ratio : float
        Ladder ratio used when ``radii`` is not given.

    Returns
    -------
    ndarray
        ``Mf`` on the grid, with ``Mf >= |f|`` everywhere.
    """
    a = np.abs(np.asarray(values, dtype=float))
    radii = radius_ladder(grid, ratio) if radii is None else np.asarray(radii, dtype=float)
    if grid.dim == 1:
        return _maximal_1d(a, grid, radii)
    hx, hy = grid.spacing
    out = _kernels.maximal_2d(np.ascontiguousarray(a), hx, hy, np.ascontiguousarray(radii))
    # the own cell is always a ball in the ladder limit
    return np.maximum(out, a)


def _maximal_1d(a, grid, radii):
    edges = grid.edges()[0]
    cum = np.concatenate([[0.0], np.cumsum(a) * grid.spacing[0]])
    x = grid.axes()[0]
    best = a.copy()
    for r in radii:
        hi = np.interp(x + r, edges, cum)
        lo = np.interp(x - r, edges, cum)
        np.maximum(best, (hi - lo) / (2 * r), out=best)
    return best


def maximal_function_at(values, grid, x, radii):
    """Maximal function of a 1D grid function at arbitrary points."""
    a = np.abs(np.asarray(values, dtype=float))
    edges = grid.edges()[0]
    cum = np.concatenate([[0.0], np.cumsum(a) * grid.spacing[0]])
    x = np.atleast_1d(np.asarray(x, dtype=float))
    best = np.zeros_like(x)
    for r in np.asarray(radii, dtype=float):
        avg = (np.interp(x + r, edges, cum) - np.interp(x - r, edges, cum)) / (2 * r)
        np.maximum(best, avg, out=best)
    return best


@dataclass(frozen=True)
class SobolevReport:
    """Outcome of the pointwise difference-quotient check."""

    ratios: np.ndarray
    constant: float

    @property
    def max_ratio(self):
        return float(self.ratios.max()) if self.ratios.size else 0.0

    @property
    def max_violation(self):
        return self.max_ratio / self.constant

    @property
    def passed(self):
        return bool(np.all(self.ratios <= self.constant))


def sobolev_ratios(values, grid, pairs, radii=None):
    """Ratios ``|f(x)-f(y)| / (|x-y| (M|grad f|(x) + M|grad f|(y)))`` on index pairs."""
    values = np.asarray(values, dtype=float)
    grad = np.sqrt(np.sum(grid_gradient(values, grid) ** 2, axis=0))
    mg = maximal_function(grad, grid, radii).ravel()
    f = values.ravel()
    pts = grid.points()
    i, j = np.asarray(pairs[0]), np.asarray(pairs[1])
    num = np.abs(f[i] - f[j])
    den = np.linalg.norm(pts[i] - pts[j], axis=1) * (mg[i] + mg[j])
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def pointwise_sobolev_check(values, grid, pairs, constant, radii=None):
    """Check ``|f(x)-f(y)| <= C |x-y| (M|grad f|(x) + M|grad f|(y))`` on pairs.

    ``pairs`` is a tuple of two index arrays into the flattened grid.
    """
    return SobolevReport(sobolev_ratios(values, grid, pairs, radii), float(constant))


def random_pairs(grid, count, rng):
    """Random index pairs of distinct cells."""
    n = int(np.prod(grid.shape))
    i = rng.integers(0, n, count)
    j = (i + rng.integers(1, n, count)) % n
    return i, j


# Singular kernel over the ball spanned by two points -------------------------

def _chord(w, radius, u):
    """Length inside a ball (centre at ``-w`` relative) of the ray along ``u``."""
    wu = float(np.dot(w, u))
    disc = wu * wu - float(np.dot(w, w)) + radius * radius
    if disc <= 0:
        return 0.0
    root = math.sqrt(disc)
    t_hi, t_lo = -wu + root, -wu - root
    return max(0.0, t_hi) - max(0.0, t_lo)


def jabin_kernel_integral(x, y):
    """Integral of ``|x-z|^{1-d} + |y-z|^{1-d}`` over the ball with diameter ``[x, y]``.

    In polar coordinates around a singular point the kernel cancels the
    Jacobian, so each term reduces to an angular integral of chord lengths,
    which is evaluated by adaptive quadrature. Supports ``d`` in {1, 2}.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dist = float(np.linalg.norm(x - y))
    if dist == 0:
        return 0.0
    centre = 0.5 * (x + y)
    radius = 0.5 * dist
    if x.size == 1:
        # the kernel is identically one on each side
        return 2.0 * 2.0 * radius
    if x.size != 2:
        raise ValueError("kernel integral implemented for d in {1, 2}")
    total = 0.0
    for s in (x, y):
        w = s - centre
        axis = math.atan2(-w[1], -w[0])
        val, _ = integrate.quad(lambda th: _chord(w, radius, np.array([math.cos(th), math.sin(th)])),
                                axis - math.pi / 2, axis + math.pi / 2, epsabs=1e-13, epsrel=1e-12)
        total += val
    return total


# Space-time norms -------------------------------------------------------------

def sample_spacetime(func, grid, times):
    """Evaluate ``func(t, points)`` on all times; result ``(nt,) + grid.shape``."""
    pts = grid.points()
    return np.stack([np.asarray(func(t, pts), dtype=float).reshape(grid.shape) for t in times])


def spacetime_norm(values, times, cell_volume, r, s):
    """``L^r(0,T; L^s)`` norm of samples ``values[k]`` taken at ``times[k]``.

    Spatial norms use cell quadrature, the time integral uses the
    trapezoidal rule; infinite exponents take maxima.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    per_time = np.array([grid_lr_norm(v, cell_volume, s) for v in values])
    r = float(r)
    if np.isinf(r):
        return float(per_time.max())
    if len(times) == 1:
        return float(per_time[0])
    return float(np.trapezoid(per_time ** r, times) ** (1.0 / r))


# Osgood moduli ---------------------------------------------------------------

@dataclass(frozen=True)
class OsgoodModulus:
    """Modulus ``rho`` and weight ``g`` of the mixed Osgood condition.

    ``rho`` is evaluated as ``max(rho(s), s)`` everywhere.
    ``closed_form(s, delta)`` may supply ``psi_delta`` exactly.
    """

    rho: object
    weight: object = None
    name: str = "custom"
    closed_form: object = None

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.maximum(np.asarray(self.rho(s), dtype=float), s)

    def g(self, t, x):
        if self.weight is None:
            return np.zeros(np.asarray(x).reshape(len(x), -1).shape[0])
        return np.asarray(self.weight(t, x), dtype=float)


def identity_modulus(weight=None):
    """``rho(s) = s``; ``psi_delta(s) = log(1 + s / delta^2)``."""
    return OsgoodModulus(lambda s: s, weight, "identity",
                         lambda s, d: np.log1p(np.asarray(s, dtype=float) / d ** 2))


def _log_rho(s):
    s = np.asarray(s, dtype=float)
    out = s.copy()
    small = (s > 0) & (s < 1)
    out[small] = s[small] * (1.0 - np.log(s[small]))
    return out


def log_modulus(weight=None):
    """``rho(s) = s (1 + |log s|)`` below one and ``s`` above (non-Lipschitz at 0)."""
    return OsgoodModulus(_log_rho, weight, "log")


def osgood_psi(s, modulus, delta, epsrel=1e-8):
    """``psi_delta(s) = int_0^s dr / (rho(r) + delta^2)`` by adaptive quadrature."""
    if s <= 0:
        return 0.0
    val, _ = integrate.quad(lambda r: 1.0 / (float(modulus(r)) + delta ** 2), 0.0, s,
                            epsabs=0.0, epsrel=epsrel, limit=200)
    return float(val)


_PSI_CACHE = {}


def psi_table(modulus, delta, s_max=1e4, ratio=1.05):
    """Vectorised ``psi_delta`` for cost matrices.

    Uses the modulus' closed form when available; otherwise tabulates the
    integral on a geometric grid (segment-wise adaptive quadrature) and
    interpolates with cubic Hermite splines whose slopes are the exact
    derivative ``1 / (rho + delta^2)``. Values beyond ``s_max`` fall back
    to direct quadrature.
    """
    if modulus.closed_form is not None:
        return lambda s: modulus.closed_form(s, delta)
    key = (id(modulus), float(delta), s_max, ratio)
    if key in _PSI_CACHE:
        return _PSI_CACHE[key][1]
    s0 = 1e-10 * min(1.0, delta ** 2)
    knots = np.concatenate([[0.0], s0 * ratio ** np.arange(int(math.log(s_max / s0) / math.log(ratio)) + 2)])

    def deriv(r):
        return 1.0 / (modulus(r) + delta ** 2)

    seg = [integrate.quad(lambda r: float(deriv(r)), lo, hi, epsabs=0.0, epsrel=1e-12)[0]
           for lo, hi in zip(knots[:-1], knots[1:])]
    vals = np.concatenate([[0.0], np.cumsum(seg)])
    spline = CubicHermiteSpline(knots, vals, deriv(knots))
    top = knots[-1]

    def psi(s):
        s = np.asarray(s, dtype=float)
        out = spline(np.clip(s, 0.0, top))
        big = s > top
        if np.any(big):
            out = np.array(out, dtype=float)
            out[big] = vals[-1] + np.array([osgood_psi_between(top, v, modulus, delta) for v in s[big]])
        return out

    _PSI_CACHE[key] = (modulus, psi)
    return psi


def osgood_psi_between(lo, hi, modulus, delta):
    return integrate.quad(lambda r: 1.0 / (float(modulus(r)) + delta ** 2), lo, hi, epsrel=1e-10)[0]


@dataclass(frozen=True)
class HypothesisReport:
    """Sampled check of the mixed Osgood condition."""

    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def passed(self):
        return bool(np.all(self.lhs <= self.rhs * (1 + 1e-12) + 1e-15))

    @property
    def max_ratio(self):
        ok = self.rhs > 0
        if np.any(~ok & (self.lhs > 1e-15)):
            return math.inf
        return float(np.max(self.lhs[ok] / self.rhs[ok])) if np.any(ok) else 0.0


def check_osgood_hypothesis(field, modulus, t, x, y):
    """Evaluate both sides of the mixed Osgood condition on point pairs.

    lhs: ``|<x-y, b(x)-b(y)>| + ||sigma(x)-sigma(y)||^2``
    rhs: ``(g(x) + g(y)) rho(|x-y|^2)``
    """
    x = np.asarray(x, dtype=float).reshape(-1, field.dim)
    y = np.asarray(y, dtype=float).reshape(-1, field.dim)
    dx = x - y
    db = field.b(t, x) - field.b(t, y)
    ds = field.sigma(t, x) - field.sigma(t, y)
    lhs = np.abs(np.sum(dx * db, axis=1)) + np.sum(ds ** 2, axis=(1, 2))
    rhs = (modulus.g(t, x) + modulus.g(t, y)) * modulus(np.sum(dx ** 2, axis=1))
    return HypothesisReport(lhs, rhs)


# Convex integrability witnesses -----------------------------------------------

def slog(s):
    """``s log(1 + s)``."""
    s = np.asarray(s, dtype=float)
    return s * np.log1p(s)


@dataclass(frozen=True)
class DvpFunction:
    """Convex increasing ``G`` with ``G(s)/s`` nondecreasing.

    ``integral`` is the weighted sum of ``G`` over the samples it was
    built from (the finiteness certificate).
    """

    func: object
    name: str = "slog"
    integral: float = float("nan")
    certificate: dict = field(default_factory=dict)

    def __call__(self, s):
        return self.func(s)


def _certificate(func, upper):
    s = np.linspace(0.0, max(upper, 1.0) * 2, 401)
    g = np.asarray(func(s), dtype=float)
    second = g[2:] - 2 * g[1:-1] + g[:-2]
    ratio = g[1:] / s[1:]
    return {"convex": bool(np.all(second >= -1e-9 * (1 + np.abs(g[1:-1])))),
            "ratio_nondecreasing": bool(np.all(np.diff(ratio) >= -1e-12 * (1 + ratio[1:])))}


def staircase_dvp(samples, weights):
    """de la Vallee-Poussin construction from a weighted sample of ``|f|``.

    Thresholds ``t_k`` are chosen with tail mass ``int_{|f|>t_k} |f| <= 2^-k``
    times the total; ``G`` is the integral of the step function counting
    thresholds below its argument, so ``G`` is convex and ``G(s)/s`` grows
    without bound.
    """
    f = np.abs(np.asarray(samples, dtype=float)).ravel()
    w = np.broadcast_to(np.asarray(weights, dtype=float), f.shape).ravel()
    order = np.argsort(f)[::-1]
    fs, ws = f[order], w[order]
    tail = np.cumsum(fs * ws)
    total = tail[-1] if tail.size else 0.0
    thresholds = []
    for k in range(1, 60):
        target = total * 2.0 ** (-k)
        idx = np.searchsorted(tail, target, side="right")
        t = fs[idx] if idx < len(fs) else 0.0
        thresholds.append(max(float(t), float(k)))
    thr = np.maximum.accumulate(np.array(thresholds))

    def func(s):
        s = np.asarray(s, dtype=float)
        # G(s) = sum_k (s - t_k)^+ + s
        return s + np.sum(np.maximum(s[..., None] - thr, 0.0), axis=-1)

    return func


def dvp_construct(samples, weights, staircase=False):
    """Witness ``G`` for the integrability of a sampled gradient magnitude.

    Parameters
    ----------
    samples : ndarray
        Values of ``|grad b|`` over space-time cells.
    weights : ndarray or float
        Quadrature weights (cell volume times time step).
    staircase : bool
        Force the staircase construction instead of ``s log(1 + s)``.
    """
    samples = np.abs(np.asarray(samples, dtype=float))
    w = np.broadcast_to(np.asarray(weights, dtype=float), samples.shape)
    use_staircase = staircase or not np.all(np.isfinite(samples))
    if not use_staircase:
        integral = float(np.sum(slog(samples) * w))
        use_staircase = not np.isfinite(integral)
    if use_staircase:
        finite = np.isfinite(samples)
        func = staircase_dvp(samples[finite], w[finite])
        integral = float(np.sum(func(samples[finite]) * w[finite]))
        name = "staircase"
    else:
        func, name = slog, "slog"
    upper = float(np.max(samples[np.isfinite(samples)])) if samples.size else 1.0
    return DvpFunction(func, name, integral, _certificate(func, upper))


def phi_delta(G, delta, bounds=(1e-6, 1e9), grid_points=4001):
    """``phi(delta) = inf_{M>0} M + (M / G(M)) [1 + log(1 + 1/delta)]``.

    A log-spaced grid scan brackets the minimiser, then a bounded scalar
    minimisation in ``log M`` refines it. The returned value is the
    objective at a feasible ``M`` and hence never below the infimum.
    """
    level = 1.0 + math.log1p(1.0 / delta)

    def objective(logm):
        m = np.exp(logm)
        return m + m / np.asarray(G(m), dtype=float) * level

    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    grid = np.linspace(lo, hi, grid_points)
    vals = objective(grid)
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    res = optimize.minimize_scalar(lambda z: float(objective(z)), bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": 500})
    return float(min(res.fun, vals[k]))
