"""Grid densities, particle clouds, their norms, moments and pushforwards.

A :class:`GridDensity` stores cell values of a density on a truncated box.
Mass that leaves the box is tracked as ``leakage`` so that
``mass() + leakage`` stays equal to one.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidExponentError, InvalidMeasureError, TransformDomainError

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class BoxGrid:
    """Uniform cell-centred grid on a box in one or two dimensions.

    Parameters
    ----------
    lower, upper : sequence of float
        Box corners, one entry per axis.
    counts : sequence of int
        Number of cells per axis, at least two.
    """

    lower: tuple
    upper: tuple
    counts: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)):
            raise ValueError("lower, upper and counts must have equal length")
        if len(counts) not in (1, 2):
            raise ValueError("grids support dimension 1 or 2 only")
        if any(c < 2 for c in counts):
            raise ValueError("each axis needs at least two cells")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ValueError("upper bound must exceed lower bound on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, lower, upper, spacing, dim=1):
        """Grid with cells of (approximately) the requested width on every axis."""
        count = int(round((upper - lower) / spacing))
        return cls((lower,) * dim, (upper,) * dim, (count,) * dim)

    @property
    def dim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def spacing(self):
        return tuple((u - l) / c for l, u, c in zip(self.lower, self.upper, self.counts))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod([u - l for l, u in zip(self.lower, self.upper)]))

    @property
    def diameter(self):
        return float(np.sqrt(sum((u - l) ** 2 for l, u in zip(self.lower, self.upper))))

    def axes(self):
        """Cell-centre coordinates along each axis."""
        return [l + (np.arange(c) + 0.5) * h
                for l, c, h in zip(self.lower, self.counts, self.spacing)]

    def edges(self):
        return [np.linspace(l, u, c + 1) for l, u, c in zip(self.lower, self.upper, self.counts)]

    def mesh(self):
        """Tuple of coordinate arrays with the grid shape (``ij`` indexing)."""
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self):
        """Cell centres as an ``(ncells, d)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def contains(self, x):
        x = np.atleast_2d(x)
        inside = np.ones(x.shape[0], dtype=bool)
        for k in range(self.dim):
            inside &= (x[:, k] >= self.lower[k]) & (x[:, k] < self.upper[k])
        return inside

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "counts": list(self.counts)}


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative cell values of a probability density on a :class:`BoxGrid`."""

    grid: BoxGrid
    values: np.ndarray
    time: float = 0.0
    leakage: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if np.any(values < 0):
            raise InvalidMeasureError("density values must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def mass(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def normalized(self):
        return GridDensity(self.grid, self.values / self.mass(), self.time, 0.0)

    def to_cloud(self):
        """Atoms at cell centres weighted by cell mass (zero cells dropped)."""
        w = self.values.ravel() * self.grid.cell_volume
        keep = w > 0
        w = w[keep]
        return ParticleCloud(self.grid.points()[keep], w / w.sum(), self.time)

    @classmethod
    def from_function(cls, grid, func, time=0.0, normalize=True):
        """Sample ``func`` at cell centres; ``func`` takes the mesh arrays."""
        values = np.asarray(func(*grid.mesh()), dtype=float)
        dens = cls(grid, np.broadcast_to(values, grid.shape).copy(), time)
        return dens.normalized() if normalize else dens


@dataclass(frozen=True)
class ParticleCloud:
    """Weighted atoms in R^d; the empirical measure of a sample."""

    points: np.ndarray
    weights: np.ndarray = None
    time: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = pts.shape[0]
        w = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != n:
            raise InvalidMeasureError("points and weights differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, n):
            raise InvalidMeasureError("weights must be nonnegative and sum to one")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class MeasureSummary:
    """Norms and moments of a measure."""

    lr_norms: dict = field(default_factory=dict)
    first_moment: float = 0.0
    alpha_moment: float = 0.0
    alpha: float = 2.0
    log_moment: float = 0.0
    in_plog: bool = True


def lr_norm(density, r):
    """L^r norm of a grid density.

    Parameters
    ----------
    density : GridDensity
    r : float
        Exponent in ``[1, inf]``.

    Returns
    -------
    float
        ``(sum |u|^r * cellvol)^(1/r)`` or ``max |u|`` for ``r = inf``.
    """
    return grid_lr_norm(density.values, density.grid.cell_volume, r)


def grid_lr_norm(values, cell_volume, r):
    """L^r norm of cell samples with the given cell volume."""
    r = float(r)
    if not r >= 1:
        raise InvalidExponentError(f"exponent r={r} must be at least 1")
    a = np.abs(np.asarray(values, dtype=float))
    if np.isinf(r):
        return float(a.max()) if a.size else 0.0
    return float((np.sum(a ** r) * cell_volume) ** (1.0 / r))


def _atoms(measure):
    if isinstance(measure, GridDensity):
        cloud = measure.to_cloud()
        return cloud.points, cloud.weights * measure.mass()
    return measure.points, measure.weights


def log_moment(measure):
    """Return ``int log(1 + |x|^2) dmu`` for a grid density or a cloud."""
    pts, w = _atoms(measure)
    return float(np.dot(w, np.log1p(np.sum(pts ** 2, axis=1))))


def moment(measure, alpha):
    """Absolute moment ``int |x|^alpha dmu``."""
    pts, w = _atoms(measure)
    return float(np.dot(w, np.linalg.norm(pts, axis=1) ** alpha))


def summarize(measure, rs=(1, 2, np.inf), alpha=2.0):
    """Collect norms and moments into a :class:`MeasureSummary`."""
    norms = {}
    if isinstance(measure, GridDensity):
        norms = {float(r): lr_norm(measure, r) for r in rs}
    lm = log_moment(measure)
    return MeasureSummary(norms, moment(measure, 1.0), moment(measure, alpha), alpha, lm, bool(np.isfinite(lm)))


def pushforward(cloud, func):
    """Image of a cloud under a pointwise map; weights are unchanged.

    ``func`` receives an ``(n, d)`` array and returns an array of the same
    leading length.
    """
    new = np.asarray(func(np.array(cloud.points)), dtype=float)
    if new.ndim == 1:
        new = new[:, None]
    if new.shape[0] != cloud.size or not np.all(np.isfinite(new)):
        raise TransformDomainError("map returned non-finite or misshapen values")
    return ParticleCloud(new, cloud.weights, cloud.time)


def density_from_cloud(cloud, grid, bandwidth=None):
    """Histogram estimate of a cloud on a grid.

    Parameters
    ----------
    cloud : ParticleCloud
    grid : BoxGrid
    bandwidth : float, optional
        If given, the histogram is mollified with this radius.

    Returns
    -------
    GridDensity
        Density whose mass equals the in-box weight; the rest is reported
        as ``leakage``.
    """
    hist, _ = np.histogramdd(cloud.points[:, :grid.dim], bins=grid.edges(), weights=cloud.weights)
    values = hist / grid.cell_volume
    inside = float(hist.sum())
    if bandwidth is not None:
        from .coefficients import mollify
        values = np.clip(mollify(values, grid, bandwidth), 0.0, None)
        total = values.sum() * grid.cell_volume
        if total > 0:
            values *= inside / total
    return GridDensity(grid, values, cloud.time, max(0.0, 1.0 - inside))


def quantile_gaps(first, second, samples=20001):
    """``|F^-1(s) - G^-1(s)|`` at midpoint levels for two 1D grid densities.

    Both densities are treated as piecewise constant, so their CDFs are
    piecewise linear and the quantile functions are exact inverses. The
    gaps describe the monotone coupling of the two measures.
    """
    if first.grid.dim != 1 or second.grid.dim != 1:
        raise ValueError("quantile formula applies to one dimension only")

    def quantile(d, levels):
        edges = d.grid.edges()[0]
        cdf = np.concatenate([[0.0], np.cumsum(d.values * d.grid.cell_volume)])
        cdf /= cdf[-1]
        # drop flat stretches so that the inverse is single valued
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        return np.interp(levels, cdf[keep], edges[keep])

    levels = (np.arange(samples) + 0.5) / samples
    return np.abs(quantile(first, levels) - quantile(second, levels))


def wasserstein_1d_densities(first, second, p=2.0, samples=20001):
    """W_p between two 1D grid densities by integrating quantile differences."""
    diff = quantile_gaps(first, second, samples)
    return float(np.mean(diff ** p) ** (1.0 / p))


def l1_distance(first, second):
    """L^1 distance between two densities on the same grid."""
    return float(np.abs(first.values - second.values).sum() * first.grid.cell_volume)


def _header_path(path):
    path = Path(path)
    return path.with_suffix(".json")


def write_density_csv(path, density, extra=None):
    """Write one row per cell (coordinates, value) plus a JSON header."""
    pts = density.grid.points()
    cols = [f"x{k}" for k in range(density.grid.dim)] + ["value"]
    body = np.column_stack([pts, density.values.ravel()])
    np.savetxt(path, body, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    header = {"kind": "grid-density", "grid": density.grid.to_dict(),
              "time": density.time, "leakage": density.leakage}
    header.update(extra or {})
    _header_path(path).write_text(json.dumps(header, indent=2, sort_keys=True))


def read_density_csv(path):
    header = json.loads(_header_path(path).read_text())
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    g = header["grid"]
    grid = BoxGrid(tuple(g["lower"]), tuple(g["upper"]), tuple(g["counts"]))
    return GridDensity(grid, body[:, -1].reshape(grid.shape), header["time"], header["leakage"])


def write_cloud_csv(path, cloud, extra=None):
    """Write one row per particle (coordinates, weight) plus a JSON header."""
    cols = [f"x{k}" for k in range(cloud.dim)] + ["weight"]
    body = np.column_stack([cloud.points, cloud.weights])
    np.savetxt(path, body, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    header = {"kind": "particle-cloud", "dim": cloud.dim, "size": cloud.size, "time": cloud.time}
    header.update(extra or {})
    _header_path(path).write_text(json.dumps(header, indent=2, sort_keys=True))


def read_cloud_csv(path):
    """Read a cloud CSV; the JSON header is optional."""
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    time = 0.0
    hp = _header_path(path)
    if hp.exists():
        time = json.loads(hp.read_text()).get("time", 0.0)
    return ParticleCloud(body[:, :-1], body[:, -1], time)
