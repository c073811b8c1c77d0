"""Coupled Euler-Maruyama simulation driven by one shared Brownian motion.

Brownian increments come from a counter-based stream: the normal used by
trajectory ``j`` for noise component ``c`` at step ``k`` is a function of
``(seed, k, j * m + c)`` only. Any subset of trajectories can therefore be
regenerated independently, and two runs with the same seed see the same
noise whatever fields they simulate.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import BlowupError
from .measures import ParticleCloud
from .transport import pair_costs, solve_exact

BLOWUP_RADIUS = 1e6
_NOISE_STREAM = 0
_COUPLING_STREAM = 1
_SAMPLING_STREAM = 2


def stream_uniforms(seed, step, start, count, stream=_NOISE_STREAM):
    """Uniforms in (0, 1) at raw positions ``start .. start+count-1`` of a step.

    Each Philox block of four 64-bit words is addressed by the counter
    ``(position // 4, step, 0, 0)`` under the key ``(seed, stream)``.
    """
    block0, offset = divmod(int(start), 4)
    bitgen = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64),
                              counter=np.array([block0, step, 0, 0], dtype=np.uint64))
    raw = bitgen.random_raw(offset + count)[offset:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def brownian_increments(seed, step, start, count, noise_dim, dt):
    """Shared increments ``dW`` for trajectories ``start .. start+count-1``."""
    u = stream_uniforms(seed, step, start * noise_dim, count * noise_dim)
    return special.ndtri(u).reshape(count, noise_dim) * np.sqrt(dt)


@dataclass(frozen=True)
class SdeScheme:
    """Uniform Euler-Maruyama time grid with output frames.

    Parameters
    ----------
    step : float
        Time step ``h``.
    n_steps : int
        Number of steps; ``step * n_steps`` is the horizon.
    frame_steps : tuple of int
        Step indices at which states are recorded (0 is the initial state).
    boundary : str
        ``none`` or ``reflect`` (mirror into ``box``).
    box : tuple, optional
        ``(lower, upper)`` arrays for reflection.
    """

    step: float
    n_steps: int
    frame_steps: tuple = (0,)
    boundary: str = "none"
    box: tuple = None

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.boundary not in ("none", "reflect"):
            raise ValueError("boundary must be 'none' or 'reflect'")
        frames = tuple(sorted(set(int(k) for k in self.frame_steps)))
        if frames and (frames[0] < 0 or frames[-1] > self.n_steps):
            raise ValueError("frame steps must lie on the time grid")
        object.__setattr__(self, "frame_steps", frames)

    @classmethod
    def uniform(cls, horizon, step, times=None, boundary="none", box=None):
        """Scheme on ``[0, horizon]``; ``times`` (default ``{0, T/4, T/2, T}``) become frames."""
        n = int(round(horizon / step))
        if abs(n * step - horizon) > 1e-12 * max(1.0, horizon):
            raise ValueError("horizon must be an integer multiple of the step")
        times = [0.0, horizon / 4, horizon / 2, horizon] if times is None else list(times)
        frames = []
        for t in times:
            k = int(round(t / step))
            if abs(k * step - t) > 1e-9:
                raise ValueError(f"frame time {t} is not on the time grid")
            frames.append(k)
        return cls(step, n, tuple(frames), boundary, box)

    @property
    def horizon(self):
        return self.step * self.n_steps

    @property
    def frame_times(self):
        return np.array(self.frame_steps, dtype=float) * self.step


@dataclass
class CoupledPathEnsemble:
    """States of paired trajectories at the scheme frames.

    ``first`` and ``second`` have shape ``(frames, N, d)``.
    """

    times: np.ndarray
    first: np.ndarray
    second: np.ndarray
    seed: int
    step: float
    coupling_index: np.ndarray = None
    info: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.first.shape[1]

    def difference(self):
        return self.first - self.second


@dataclass(frozen=True)
class CostCurve:
    """Monte Carlo mean of a pair cost per frame with its standard error."""

    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray

    def rows(self):
        return np.column_stack([self.times, self.mean, self.se])


@dataclass(frozen=True)
class InitialCoupling:
    first: np.ndarray
    second: np.ndarray
    index: np.ndarray
    plan: object


def sample_initial_coupling(mu0, nu0, spec, count, seed=0):
    """Draw ``count`` i.i.d. pairs from an optimal plan between two measures.

    Returns the paired points, the flat plan index of every draw, and the
    plan itself.
    """
    plan = solve_exact(mu0, nu0, spec)
    probs = plan.matrix.ravel()
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    u = stream_uniforms(seed, 0, 0, count, stream=_COUPLING_STREAM)
    index = np.minimum(np.searchsorted(cdf, u, side="right"), len(probs) - 1)
    rows, cols = np.divmod(index, plan.matrix.shape[1])
    return InitialCoupling(plan.rows.points[rows].copy(), plan.cols.points[cols].copy(), index, plan)


def sample_density(density, count, seed=0):
    """Draw ``count`` points from a grid density: a cell by mass, then uniform inside it."""
    grid = density.grid
    mass = np.asarray(density.values, dtype=float).ravel()
    cdf = np.cumsum(mass)
    if not cdf[-1] > 0:
        raise ValueError("density has no mass")
    cdf /= cdf[-1]
    u = stream_uniforms(seed, 0, 0, count * (grid.dim + 1), stream=_SAMPLING_STREAM)
    cells = np.minimum(np.searchsorted(cdf, u[:count], side="right"), len(mass) - 1)
    centres = grid.points()[cells]
    jitter = (u[count:].reshape(count, grid.dim) - 0.5) * np.asarray(grid.spacing)
    return centres + jitter


def _reflect(x, lower, upper):
    width = upper - lower
    y = np.mod(x - lower, 2 * width)
    return lower + np.where(y > width, 2 * width - y, y)


def _check(states, t):
    bad = ~np.isfinite(states) | (np.abs(states) > BLOWUP_RADIUS)
    if np.any(bad):
        idx = int(np.argwhere(bad.any(axis=tuple(range(1, states.ndim))))[0, 0])
        raise BlowupError(f"trajectory {idx} left |x| <= {BLOWUP_RADIUS:g} at t={t:g}", idx, t)


def euler_maruyama(fields, inits, scheme, seed=0):
    """Euler-Maruyama for several SDEs sharing one Brownian path per trajectory.

    ``Y_{k+1} = Y_k + b(t_k, Y_k) h + sigma(t_k, Y_k) dW_k``.

    Returns a list with one ``(frames, N, d)`` array per field.
    """
    states = [np.array(y, dtype=float).reshape(len(y), -1) for y in inits]
    n = states[0].shape[0]
    m = fields[0].noise_dim
    h = scheme.step
    frames = set(scheme.frame_steps)
    out = [[] for _ in fields]
    for k in range(scheme.n_steps + 1):
        if k in frames:
            for slot, y in zip(out, states):
                slot.append(y.copy())
        if k == scheme.n_steps:
            break
        t = k * h
        dw = brownian_increments(seed, k, 0, n, m, h)
        for idx, (fld, y) in enumerate(zip(fields, states)):
            sig = fld.sigma(t, y)
            y = y + fld.b(t, y) * h + np.einsum("nij,nj->ni", sig, dw)
            if scheme.boundary == "reflect":
                y = _reflect(y, np.asarray(scheme.box[0]), np.asarray(scheme.box[1]))
            _check(y, t + h)
            states[idx] = y
    return [np.stack(slot) for slot in out]


def evolve_coupled(field1, field2, init1, init2, scheme, seed=0, coupling_index=None):
    """Simulate two SDEs from paired initial points with shared noise."""
    first, second = euler_maruyama([field1, field2], [init1, init2], scheme, seed)
    return CoupledPathEnsemble(scheme.frame_times, first, second, seed, scheme.step, coupling_index)


def evolve(field, init, scheme, seed=0):
    """Single-SDE ensemble; frames have shape ``(frames, N, d)``."""
    return euler_maruyama([field], [init], scheme, seed)[0]


def coupled_cost_curve(ensemble, spec):
    """Mean of ``c(Y1_t, Y2_t)`` per frame with its standard error.

    Each mean is the cost of one admissible coupling of the two marginals,
    hence an upper bound on the optimal transport value between them.
    """
    means, ses = [], []
    for y1, y2 in zip(ensemble.first, ensemble.second):
        c = pair_costs(spec, y1, y2)
        means.append(float(c.mean()))
        ses.append(float(c.std(ddof=1) / np.sqrt(len(c))) if len(c) > 1 else 0.0)
    return CostCurve(np.asarray(ensemble.times), np.array(means), np.array(ses))


def marginals(ensemble, frame):
    """Equal-weight clouds of both components at a frame index."""
    t = float(ensemble.times[frame])
    return (ParticleCloud(ensemble.first[frame], None, t),
            ParticleCloud(ensemble.second[frame], None, t))


def energy_statistic(x, y):
    """Two-sample energy distance (squared form) between samples."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    if x.shape[1] == 1:
        return float(stats.energy_distance(x[:, 0], y[:, 0]) ** 2)

    def mean_dist(p, q):
        total = 0.0
        for s in range(0, len(p), 512):
            total += np.linalg.norm(p[s:s + 512, None, :] - q[None, :, :], axis=2).sum()
        return total / (len(p) * len(q))

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


@dataclass(frozen=True)
class TwoSampleResult:
    statistic: float
    p_value: float
    level: float

    @property
    def passed(self):
        return self.p_value > self.level


def energy_test(x, y, permutations=199, level=0.01, seed=0):
    """Permutation test of equal distributions based on the energy distance."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    observed = energy_statistic(x, y)
    pooled = np.concatenate([x, y])
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(permutations):
        perm = rng.permutation(len(pooled))
        if energy_statistic(pooled[perm[:len(x)]], pooled[perm[len(x):]]) >= observed:
            exceed += 1
    return TwoSampleResult(observed, (exceed + 1) / (permutations + 1), level)


def write_cost_curve_csv(path, curve):
    """Write ``t, mean, se`` rows."""
    np.savetxt(path, curve.rows(), delimiter=",", header="t,mean,se", comments="", fmt="%.17g")
