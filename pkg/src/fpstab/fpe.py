"""Conservative explicit grid solver for Fokker-Planck and continuity equations.

The solver advances

    du/dt = (kappa / 2) sum_ij d_i d_j (a_ij u) - div(b u),   a = sigma sigma^T,

in flux form: upwind fluxes for the drift, centred differences of the
products ``a_ij u`` for the second-order part. With zero-flux boundaries
the scheme conserves mass to rounding; in absorbing mode the outflow is
booked as leakage.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coefficients import CoefficientField, grid_gradient
from .errors import InvalidCoefficientsError, StepSizeError
from .measures import GridDensity, lr_norm

SAFETY = 0.9
CLIP_BUDGET = 1e-12


@dataclass(frozen=True)
class FpeProblem:
    """Initial value problem on a box grid.

    Parameters
    ----------
    field : CoefficientField
    initial : GridDensity
    kappa : float
        Scale of the second-order term; 0 gives the continuity equation.
    horizon : float
    boundary : str
        ``zero-flux`` or ``absorbing``.
    """

    field: CoefficientField
    initial: GridDensity
    kappa: float = 1.0
    horizon: float = 1.0
    boundary: str = "zero-flux"

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.boundary not in ("zero-flux", "absorbing"):
            raise ValueError("boundary must be 'zero-flux' or 'absorbing'")


@dataclass
class FpeSolution:
    """Densities at the requested times plus run bookkeeping."""

    times: np.ndarray
    frames: list
    info: dict = field(default_factory=dict)

    def at(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        return self.frames[k]


def _interface_points(grid):
    """Evaluation points for the drift on cell interfaces, one set per axis."""
    axes = grid.axes()
    edges = grid.edges()
    out = []
    for k in range(grid.dim):
        coords = [edges[j] if j == k else axes[j] for j in range(grid.dim)]
        mesh = np.meshgrid(*coords, indexing="ij")
        out.append((np.stack([m.ravel() for m in mesh], axis=1), mesh[0].shape))
    return out


class _Coefficients:
    """Grid samples of interface velocities and diffusion products at time t."""

    def __init__(self, problem):
        self.problem = problem
        self.grid = problem.initial.grid
        self.faces = _interface_points(self.grid)
        self.centres = self.grid.points()
        self._cache = None

    def at(self, t):
        fld = self.problem.field
        if fld.autonomous and self._cache is not None:
            return self._cache
        vel = []
        for k, (pts, shape) in enumerate(self.faces):
            vel.append(np.ascontiguousarray(fld.b(t, pts)[:, k].reshape(shape)))
        a = fld.a(t, self.centres)
        eig = np.linalg.eigvalsh(a)
        if eig.min() < -1e-12 * max(1.0, np.abs(eig).max()):
            raise InvalidCoefficientsError("diffusion matrix is not positive semidefinite")
        diff = 0.5 * self.problem.kappa * a
        shape = self.grid.shape
        comps = {(i, j): np.ascontiguousarray(diff[:, i, j].reshape(shape))
                 for i in range(self.grid.dim) for j in range(self.grid.dim)}
        out = (vel, comps)
        if fld.autonomous:
            self._cache = out
        return out

    def step_limits(self, t):
        vel, comps = self.at(t)
        h = self.grid.spacing
        vmax = max(float(np.abs(v).max()) for v in vel)
        amax = max(float(np.abs(c).max()) for c in comps.values()) * 2.0
        if self.problem.kappa > 0:
            amax /= self.problem.kappa
        rate = sum(float(np.abs(v).max()) / hk for v, hk in zip(vel, h))
        rate += self.problem.kappa * amax * sum(1.0 / hk ** 2 for hk in h)
        if self.grid.dim == 2:
            rate += self.problem.kappa * amax / (h[0] * h[1])
        auto = SAFETY / rate if rate > 0 else math.inf
        lim_adv = SAFETY * min(h) / vmax if vmax > 0 else math.inf
        lim_diff = SAFETY * min(h) ** 2 / (self.problem.kappa * amax) if self.problem.kappa * amax > 0 else math.inf
        return auto, min(lim_adv, lim_diff)


def _advance(coeffs, u, t, h, absorbing):
    vel, comps = coeffs.at(t)
    grid = coeffs.grid
    if grid.dim == 1:
        return _kernels.fpe_step_1d(u, vel[0], comps[(0, 0)], h, grid.spacing[0], absorbing)
    return _kernels.fpe_step_2d(u, vel[0], vel[1], comps[(0, 0)], comps[(1, 1)], comps[(0, 1)],
                                h, grid.spacing[0], grid.spacing[1], absorbing)


def solve(problem, times=None, steps=None):
    """Advance the density and return frames at the requested times.

    Parameters
    ----------
    problem : FpeProblem
    times : sequence of float, optional
        Output times in ``[0, horizon]``; default ``{0, T/4, T/2, T}``.
    steps : int, optional
        Total number of uniform steps. Validated against the restriction
        ``h <= 0.9 min(dx / max|b|, dx^2 / (kappa max|a|))``. If omitted a
        positivity-preserving step is chosen automatically.

    Returns
    -------
    FpeSolution
    """
    T = problem.horizon
    times = [0.0, T / 4, T / 2, T] if times is None else sorted(float(t) for t in times)
    coeffs = _Coefficients(problem)
    auto, limit = coeffs.step_limits(0.0)
    absorbing = problem.boundary == "absorbing"
    cell = problem.initial.grid.cell_volume
    u = np.ascontiguousarray(np.array(problem.initial.values, dtype=float))
    leakage = float(problem.initial.leakage)
    clipped = 0.0
    min_before_clip = 0.0
    if steps is not None:
        h_fixed = T / steps
        if h_fixed > limit * (1 + 1e-12):
            raise StepSizeError(f"step {h_fixed:.3g} exceeds the stability limit {limit:.3g}", auto)
    frames, t, total_steps = [], 0.0, 0
    for target in times:
        span = target - t
        if span > 1e-14:
            if steps is not None:
                n = max(1, int(round(span / h_fixed)))
            else:
                n = max(1, int(math.ceil(span / auto * (1 - 1e-12))))
            h = span / n
            for _ in range(n):
                if not problem.field.autonomous:
                    a_t, _ = coeffs.step_limits(t)
                    if h > a_t / SAFETY:
                        raise StepSizeError("time-dependent drift exceeds the step restriction", a_t)
                u, out = _advance(coeffs, u, t, h, absorbing)
                leakage += out
                low = float(u.min())
                if low < 0:
                    min_before_clip = min(min_before_clip, low)
                    clipped += float(-u[u < 0].sum() * cell)
                    u = np.ascontiguousarray(np.maximum(u, 0.0))
                t += h
                total_steps += 1
            t = target
        frames.append(GridDensity(problem.initial.grid, u.copy(), target, leakage))
    if clipped > CLIP_BUDGET:
        warnings.warn(f"clipped {clipped:.3g} of negative mass (budget {CLIP_BUDGET:g})", RuntimeWarning,
                      stacklevel=2)
    info = {"steps": total_steps, "auto_step": auto, "step_limit": limit,
            "leakage": leakage, "clipped_mass": clipped, "min_before_clip": min_before_clip,
            "kappa": problem.kappa, "boundary": problem.boundary}
    return FpeSolution(np.array(times), frames, info)


def divergence_form_convert(fld, fd_step=1e-5):
    """Drift ``b + (1/2) div(sigma sigma^T)`` with the same diffusion factor.

    Solving the non-divergence equation with this drift is equivalent to
    solving ``du/dt = (1/2) div(a grad u) - div(b u)`` with the original
    drift. Derivatives of ``a`` use central differences of step ``fd_step``.
    """

    def drift(t, x):
        x = np.asarray(x, dtype=float)
        out = np.array(fld.b(t, x), dtype=float)
        for j in range(fld.dim):
            e = np.zeros(fld.dim)
            e[j] = fd_step
            da = (fld.a(t, x + e) - fld.a(t, x - e)) / (2 * fd_step)
            out += 0.5 * da[:, :, j]
        return out

    return CoefficientField(drift, fld.diffusion, fld.dim, fld.noise_dim, fld.horizon,
                            dict(fld.exponents), None, fld.name + "-divergence-form", fld.autonomous)


def solve_divergence_form(problem, times=None):
    """Independent 1D discretisation of ``du/dt = (kappa/2) d(a du) - d(b u)``.

    The diffusive flux is ``-(kappa/2) a_{i+1/2} (u_{i+1} - u_i) / dx`` with
    ``a`` averaged to interfaces; advection is upwind as in :func:`solve`.
    """
    grid = problem.initial.grid
    if grid.dim != 1:
        raise ValueError("the divergence-form solver is one dimensional")
    T = problem.horizon
    times = [0.0, T / 4, T / 2, T] if times is None else sorted(times)
    dx = grid.spacing[0]
    faces = grid.edges()[0][:, None]
    fld = problem.field
    u = np.array(problem.initial.values, dtype=float)
    frames, t = [], 0.0

    def coeff(time):
        vel = fld.b(time, faces)[:, 0]
        a_face = 0.5 * problem.kappa * fld.a(time, faces)[:, 0, 0]
        return vel, a_face

    vel, a_face = coeff(0.0)
    rate = np.abs(vel).max() / dx + 2 * a_face.max() / dx ** 2
    h_max = SAFETY / rate if rate > 0 else T
    for target in times:
        span = target - t
        if span > 1e-14:
            n = max(1, int(math.ceil(span / h_max)))
            h = span / n
            for _ in range(n):
                if not fld.autonomous:
                    vel, a_face = coeff(t)
                ext = np.concatenate([[0.0], u, [0.0]])
                flux = (np.maximum(vel, 0) * ext[:-1] + np.minimum(vel, 0) * ext[1:]
                        - a_face * (ext[1:] - ext[:-1]) / dx)
                flux[0] = flux[-1] = 0.0
                u = np.maximum(u - h / dx * (flux[1:] - flux[:-1]), 0.0)
                t += h
            t = target
        frames.append(GridDensity(grid, u.copy(), target))
    return FpeSolution(np.array(times), frames, {})


def negative_divergence_sup(fld, grid, t):
    """``|| (div b_t)^- ||_inf`` from centred differences on the grid."""
    b = np.moveaxis(fld.b(t, grid.points()), 1, 0).reshape((fld.dim,) + grid.shape)
    div = sum(grid_gradient(b[k], grid)[k] for k in range(fld.dim))
    return float(np.max(np.maximum(-div, 0.0)))


@dataclass(frozen=True)
class LqReport:
    """Per-frame ``L^q`` norms against the a priori bound."""

    q: float
    norms: np.ndarray
    bound: float
    tolerance: float

    @property
    def margins(self):
        return self.bound * (1 + self.tolerance) - self.norms

    @property
    def passed(self):
        return bool(np.all(self.margins >= 0))


def apriori_bound(initial, q, fld=None, horizon=None, neg_div_integral=None, samples=101):
    """``||rho_0||_q exp((1 - 1/q) int_0^T ||(div b_t)^-||_inf dt)``."""
    if neg_div_integral is None:
        ts = np.linspace(0.0, horizon, samples)
        vals = [negative_divergence_sup(fld, initial.grid, t) for t in ts]
        neg_div_integral = float(np.trapezoid(vals, ts))
    expo = 1.0 if np.isinf(q) else 1.0 - 1.0 / q
    return lr_norm(initial, q) * math.exp(expo * neg_div_integral)


def lq_apriori_check(solution, q, fld=None, neg_div_integral=None, tolerance=0.01):
    """Compare ``sup_t ||rho_t||_q`` with the kappa-independent a priori bound.

    Either a coefficient field (the divergence is differenced on the grid)
    or the precomputed integral of ``||(div b)^-||_inf`` must be given.
    """
    first = solution.frames[0]
    horizon = float(solution.times[-1])
    bound = apriori_bound(first, q, fld, horizon, neg_div_integral)
    norms = np.array([lr_norm(f, q) for f in solution.frames])
    return LqReport(float(q), norms, bound, tolerance)
