"""Zvonkin transformation: backward parabolic system, the map ``psi``, its
inverse and the transformed SDE coefficients.

For a drift ``b`` and damping ``lam > 0`` the vector function ``phi`` solves

    d_t phi + (1/2) Lap phi + b . grad phi - lam phi = -b,   phi_T = 0,

backwards in time. With ``psi_t(x) = x + phi_t(x)`` the process
``Y = psi_t(X)`` of ``dX = b dt + dW`` solves ``dY = b~ dt + sigma~ dW`` with
``sigma~ = Id + grad phi o psi^-1`` and ``b~ = lam phi o psi^-1``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientField, sample_drift, spacetime_norm
from .errors import ContractionFailure, SelectionFailure, StepSizeError
from .measures import grid_lr_norm

SAFETY = 0.9


def _pad(u, axis):
    """Edge-replicating ghost layer of width two along ``axis``."""
    widths = [(0, 0)] * u.ndim
    widths[axis] = (2, 2)
    return np.pad(u, widths, mode="edge")


def _take(u, axis, start, stop):
    idx = [slice(None)] * u.ndim
    idx[axis] = slice(start, stop if stop != 0 else None)
    return u[tuple(idx)]


def _second_order_ops(u, spacing, first_axis):
    """Centred gradient (per axis) and Laplacian with replicated edges."""
    grads, lap = [], 0.0
    for k, h in enumerate(spacing):
        ax = first_axis + k
        p = _pad(u, ax)
        c, lft, rgt = _take(p, ax, 2, -2), _take(p, ax, 1, -3), _take(p, ax, 3, -1)
        grads.append((rgt - lft) / (2 * h))
        lap = lap + (rgt - 2 * c + lft) / h ** 2
    return grads, lap


def _fourth_order_ops(u, spacing, first_axis):
    """Fourth-order centred gradient and Laplacian (valid away from edges)."""
    grads, lap = [], 0.0
    for k, h in enumerate(spacing):
        ax = first_axis + k
        p = _pad(u, ax)
        m2, m1 = _take(p, ax, 0, -4), _take(p, ax, 1, -3)
        c = _take(p, ax, 2, -2)
        p1, p2 = _take(p, ax, 3, -1), _take(p, ax, 4, 0)
        grads.append((m2 - 8 * m1 + 8 * p1 - p2) / (12 * h))
        lap = lap + (-m2 + 16 * m1 - 30 * c + 16 * p1 - p2) / (12 * h ** 2)
    return grads, lap


def _operator(phi, drift, lam, spacing, fourth=False):
    """``(1/2) Lap phi + b . grad phi - lam phi + b`` for phi of shape (d, *grid)."""
    ops = _fourth_order_ops if fourth else _second_order_ops
    grads, lap = ops(phi, spacing, 1)
    adv = sum(drift[k][None] * grads[k] for k in range(len(spacing)))
    return 0.5 * lap + adv - lam * phi + drift


def _jacobian(phi, spacing):
    """``grad phi`` with shape (d, d, *grid): entry [i, k] = d phi_i / d x_k."""
    grads, _ = _second_order_ops(phi, spacing, 1)
    return np.stack(grads, axis=1)


def _lipschitz_of_interpolant(phi, spacing):
    """Largest one-sided difference quotient (bounds the multilinear interpolant)."""
    worst = 0.0
    for k, h in enumerate(spacing):
        diff = np.abs(np.diff(phi, axis=1 + k)) / h
        worst = max(worst, float(np.sqrt(np.sum(diff ** 2, axis=0)).max()) if diff.size else 0.0)
    return worst


def _operator_norm(jac):
    """Spectral norm of the Jacobian per cell."""
    d = jac.shape[0]
    if d == 1:
        return np.abs(jac[0, 0])
    mats = np.moveaxis(jac.reshape(d, d, -1), -1, 0)
    return np.linalg.norm(mats, ord=2, axis=(1, 2))


@dataclass
class ZvonkinSolution:
    """Stored frames of ``phi`` and ``grad phi`` on an ascending time grid."""

    lam: float
    grid: object
    times: np.ndarray
    phi: np.ndarray
    grad: np.ndarray
    sup_grad: float
    residuals: np.ndarray
    drift: CoefficientField
    horizon: float
    info: dict = field(default_factory=dict)

    def _frame_weights(self, t):
        t = min(max(float(t), self.times[0]), self.times[-1])
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        k = min(max(k, 0), len(self.times) - 2)
        span = self.times[k + 1] - self.times[k]
        w = (t - self.times[k]) / span if span > 0 else 0.0
        return k, w

    def field_at(self, t, values):
        k, w = self._frame_weights(t)
        return (1 - w) * values[k] + w * values[k + 1]

    def phi_at(self, t, x):
        """``phi_t(x)`` for points ``x`` of shape (n, d)."""
        return interpolate(self.grid, self.field_at(t, self.phi), x)

    def grad_at(self, t, x):
        """``grad phi_t(x)`` with shape (n, d, d)."""
        jac = self.field_at(t, self.grad)
        d = self.grid.dim
        flat = jac.reshape((d * d,) + self.grid.shape)
        return interpolate(self.grid, flat, x).reshape(-1, d, d)


def interpolate(grid, values, x):
    """Multilinear interpolation of component fields at points.

    ``values`` has shape ``(c,) + grid.shape``; points outside the cell
    centres are clamped to the nearest boundary value.
    """
    x = np.asarray(x, dtype=float).reshape(-1, grid.dim)
    axes = grid.axes()
    idx, wts = [], []
    for k in range(grid.dim):
        ax = axes[k]
        pos = (np.clip(x[:, k], ax[0], ax[-1]) - ax[0]) / grid.spacing[k]
        i0 = np.minimum(np.floor(pos).astype(int), len(ax) - 2)
        idx.append(i0)
        wts.append(pos - i0)
    out = np.zeros((x.shape[0], values.shape[0]))
    for corner in range(2 ** grid.dim):
        weight = np.ones(x.shape[0])
        sel = []
        for k in range(grid.dim):
            bit = (corner >> k) & 1
            weight *= wts[k] if bit else 1 - wts[k]
            sel.append(idx[k] + bit)
        out += weight[:, None] * values[(slice(None),) + tuple(sel)].T
    return out


def solve_backward(drift, lam, grid, horizon, steps=None, max_frames=201):
    """March the backward system from ``phi_T = 0`` down to ``t = 0``.

    Parameters
    ----------
    drift : CoefficientField
        Only the drift is used; the diffusion is the identity.
    lam : float
        Damping ``lam > 0``.
    grid : BoxGrid
    horizon : float
    steps : int, optional
        Number of uniform steps; checked against the explicit restriction.
    max_frames : int
        Upper bound on stored frames (evenly spaced in steps).

    Returns
    -------
    ZvonkinSolution
        Frames in ascending time; ``residuals[k]`` is the L^2 norm of the
        PDE residual (time differences against fourth-order spatial
        stencils at the step midpoint) on the interior at stored step ``k``.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    d = grid.dim
    spacing = grid.spacing
    b0 = sample_drift(drift, grid, horizon)
    bmax = float(np.abs(b0).max())
    rate = sum(1.0 / h ** 2 for h in spacing) + lam + sum(bmax / h for h in spacing)
    h_max = SAFETY / rate
    if steps is None:
        steps = int(math.ceil(horizon / h_max))
    h = horizon / steps
    if h > h_max * (1 + 1e-12):
        raise StepSizeError(f"step {h:.3g} exceeds the explicit limit {h_max:.3g}", h_max)
    every = max(1, int(math.ceil(steps / (max_frames - 1))))
    store = set(range(0, steps + 1, every)) | {steps}
    phi = np.zeros((d,) + tuple(grid.shape))
    frames, jacs, taus, residuals = [], [], [], []
    sup_grad = 0.0
    interior = tuple([slice(None)] + [slice(3, -3)] * d)
    cell = grid.cell_volume
    drift_now = b0 if drift.autonomous else None
    for k in range(steps + 1):
        t = horizon - k * h
        if not drift.autonomous:
            drift_now = sample_drift(drift, grid, t)
        jac = _jacobian(phi, spacing)
        sup_grad = max(sup_grad, float(_operator_norm(jac).max()), _lipschitz_of_interpolant(phi, spacing))
        if k == steps:
            if k in store:
                frames.append(phi.copy())
                jacs.append(jac)
                taus.append(t)
                residuals.append(residuals[-1] if residuals else 0.0)
            break
        new = phi + h * _operator(phi, drift_now, lam, spacing)
        if k in store:
            frames.append(phi.copy())
            jacs.append(jac)
            taus.append(t)
            drift_next = drift_now if drift.autonomous else sample_drift(drift, grid, t - h)
            mid = 0.5 * (_operator(phi, drift_now, lam, spacing, True)
                         + _operator(new, drift_next, lam, spacing, True))
            res = ((new - phi) / h - mid)[interior]
            residuals.append(float(np.sqrt(np.sum(res ** 2) * cell)))
        phi = new
    order = np.argsort(taus)
    return ZvonkinSolution(lam, grid, np.asarray(taus)[order], np.stack(frames)[order],
                           np.stack(jacs)[order], sup_grad, np.asarray(residuals)[order],
                           drift, horizon, {"steps": steps, "step": h})


@dataclass(frozen=True)
class LambdaSelection:
    lam: float
    norm: float
    solution: ZvonkinSolution
    attempts: tuple


def select_lambda(drift, grid, horizon, target=0.5, start=1.0, max_lam=2.0 ** 30, steps=None):
    """Double ``lam`` from ``start`` until ``sup |grad phi| <= target``."""
    lam = float(start)
    attempts = []
    while lam <= max_lam:
        sol = solve_backward(drift, lam, grid, horizon, steps)
        attempts.append((lam, sol.sup_grad))
        if sol.sup_grad <= target:
            return LambdaSelection(lam, sol.sup_grad, sol, tuple(attempts))
        lam *= 2.0
    raise SelectionFailure(f"no lam up to {max_lam:g} brought sup |grad phi| below {target}")


@dataclass(frozen=True)
class Diffeomorphism:
    """``psi_t(x) = x + phi_t(x)`` at a fixed time with a fixed-point inverse."""

    solution: ZvonkinSolution
    time: float

    def forward(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.solution.grid.dim)
        return x + self.solution.phi_at(self.time, x)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.solution.grid.dim)
        return np.eye(x.shape[1])[None] + self.solution.grad_at(self.time, x)

    def inverse(self, y, tol=1e-10, max_iter=100):
        return invert(self, y, tol, max_iter)[0]


def invert(psi, y, tol=1e-10, max_iter=100):
    """Solve ``psi(x) = y`` by ``x_{k+1} = y - phi(x_k)`` from ``x_0 = y``.

    Returns the points and the number of iterations used.
    """
    y = np.asarray(y, dtype=float).reshape(-1, psi.solution.grid.dim)
    x = y.copy()
    for it in range(1, max_iter + 1):
        nxt = y - psi.solution.phi_at(psi.time, x)
        step = float(np.abs(nxt - x).max()) if x.size else 0.0
        x = nxt
        if step <= tol:
            return x, it
    raise ContractionFailure(f"fixed point did not reach {tol:g} in {max_iter} iterations")


@dataclass(frozen=True)
class TransformedCoefficients:
    """``sigma~`` and ``b~`` as a coefficient field plus Lipschitz estimates."""

    field: CoefficientField
    lipschitz_sigma: float
    lipschitz_drift: float


def _transformed_field(sol):
    d = sol.grid.dim

    def preimage(t, y):
        return invert(Diffeomorphism(sol, t), y)[0]

    def drift(t, y):
        return sol.lam * sol.phi_at(t, preimage(t, y))

    def diffusion(t, y):
        return np.eye(d)[None] + sol.grad_at(t, preimage(t, y))

    return CoefficientField(drift, diffusion, d, d, sol.horizon, {}, None, "zvonkin-transformed", False)


def _sampled_lipschitz(func, grid, times, rng, pairs=2000):
    pts = grid.points()
    worst = 0.0
    for t in times:
        i = rng.integers(0, len(pts), pairs)
        j = rng.integers(0, len(pts), pairs)
        keep = i != j
        x, y = pts[i[keep]], pts[j[keep]]
        diff = (func(t, x) - func(t, y)).reshape(len(x), -1)
        ratio = np.linalg.norm(diff, axis=1) / np.linalg.norm(x - y, axis=1)
        worst = max(worst, float(ratio.max()))
    return worst


def transform_coefficients(sol, rng=None):
    """Transformed diffusion and drift with sampled Lipschitz seminorms."""
    rng = np.random.default_rng(0) if rng is None else rng
    fld = _transformed_field(sol)
    times = np.linspace(0.0, sol.horizon, 5)
    lip_s = _sampled_lipschitz(fld.sigma, sol.grid, times, rng)
    lip_b = _sampled_lipschitz(fld.b, sol.grid, times, rng)
    return TransformedCoefficients(fld, lip_s, lip_b)


def inverse_lipschitz_ratios(psi, x, y):
    """``|psi^-1(x) - psi^-1(y)| / |x - y|`` on point pairs."""
    ix, iy = psi.inverse(x), psi.inverse(y)
    x = np.asarray(x, dtype=float).reshape(len(ix), -1)
    y = np.asarray(y, dtype=float).reshape(len(iy), -1)
    return np.linalg.norm(ix - iy, axis=1) / np.linalg.norm(x - y, axis=1)


def compare_transforms(sol1, sol2, p, q, frames=None):
    """Difference norms of two Zvonkin pipelines against the drift difference.

    Returns a dict with ``drift_diff`` (``||b1 - b2||_{L^q(L^p)}``),
    ``phi_diff`` (``sup_t ||phi1 - phi2||_{W^{1,p}}``), ``btilde_diff``
    (``||b~1 - b~2||_{L^inf(L^p)}``), ``sigmatilde_diff``
    (``||sigma~1 - sigma~2||_{L^q(L^p)}``) and the ratios of the last three
    to the first.
    """
    if sol1.grid != sol2.grid or sol1.lam != sol2.lam:
        raise ValueError("both solutions must share the grid and lam")
    grid = sol1.grid
    cell = grid.cell_volume
    times = sol1.times if frames is None else np.asarray(frames)
    pts = grid.points()
    f1, f2 = _transformed_field(sol1), _transformed_field(sol2)
    drift_diff, phi_diff, bt_diff, st_diff = [], [], [], []
    for t in times:
        db = sample_drift(sol1.drift, grid, t) - sample_drift(sol2.drift, grid, t)
        drift_diff.append(np.sqrt(np.sum(db ** 2, axis=0)))
        dphi = sol1.field_at(t, sol1.phi) - sol2.field_at(t, sol2.phi)
        dgrad = sol1.field_at(t, sol1.grad) - sol2.field_at(t, sol2.grad)
        phi_diff.append(grid_lr_norm(np.sqrt(np.sum(dphi ** 2, axis=0)), cell, p)
                        + grid_lr_norm(np.sqrt(np.sum(dgrad ** 2, axis=(0, 1))), cell, p))
        bt = f1.b(t, pts) - f2.b(t, pts)
        bt_diff.append(np.linalg.norm(bt, axis=1).reshape(grid.shape))
        st = (f1.sigma(t, pts) - f2.sigma(t, pts)).reshape(len(pts), -1)
        st_diff.append(np.linalg.norm(st, axis=1).reshape(grid.shape))
    out = {
        "drift_diff": spacetime_norm(np.stack(drift_diff), times, cell, q, p),
        "phi_diff": float(max(phi_diff)),
        "btilde_diff": spacetime_norm(np.stack(bt_diff), times, cell, np.inf, p),
        "sigmatilde_diff": spacetime_norm(np.stack(st_diff), times, cell, q, p),
    }
    base = out["drift_diff"]
    for key in ("phi_diff", "btilde_diff", "sigmatilde_diff"):
        out[key + "_ratio"] = out[key] / base if base > 0 else 0.0
    return out
