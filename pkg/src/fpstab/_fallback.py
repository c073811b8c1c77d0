"""Pure numpy versions of the compiled kernels in ``_core``.

Signatures and results match the compiled module exactly up to
floating-point summation order.
"""

import math

import numpy as np


def maximal_2d(a, hx, hy, radii):
    """Largest lattice-disc average of ``a`` over the given radii.

    The disc of radius ``r`` around cell ``(i, j)`` holds the lattice
    offsets ``(di, dj)`` with ``(di hx)^2 + (dj hy)^2 <= r^2``; offsets that
    fall outside the array count as zeros.
    """
    nx, ny = a.shape
    prefix = np.zeros((nx, ny + 1))
    np.cumsum(a, axis=1, out=prefix[:, 1:])
    cols = np.arange(ny)
    best = np.zeros_like(a)
    for r in radii:
        ri = int(math.floor(r / hx))
        total = np.zeros_like(a)
        count = 0
        for di in range(-ri, ri + 1):
            rem = r * r - (di * hx) ** 2
            if rem < 0:
                continue
            w = int(math.floor(math.sqrt(rem) / hy))
            count += 2 * w + 1
            lo = np.clip(cols - w, 0, ny)
            hi = np.clip(cols + w + 1, 0, ny)
            src = slice(max(0, di), nx + min(0, di))
            dst = slice(max(0, -di), nx - max(0, di))
            total[dst] += prefix[src][:, hi] - prefix[src][:, lo]
        np.maximum(best, total / count, out=best)
    return best


def _upwind(vel, left, right):
    return np.maximum(vel, 0.0) * left + np.minimum(vel, 0.0) * right


def fpe_step_1d(u, vel, diff, h, dx, absorbing):
    """One explicit conservative step in 1D.

    Parameters
    ----------
    u : ndarray, shape (n,)
        Cell densities.
    vel : ndarray, shape (n + 1,)
        Drift at cell interfaces.
    diff : ndarray, shape (n,)
        ``kappa / 2 * a`` at cell centres.
    h, dx : float
    absorbing : bool
        If true the exterior is a zero-density ghost layer, otherwise the
        boundary fluxes vanish.

    Returns
    -------
    (ndarray, float)
        Updated densities and the mass that left through the boundary.
    """
    n = u.shape[0]
    ext = np.zeros(n + 2)
    ext[1:-1] = u
    dext = np.zeros(n + 2)
    dext[1:-1] = diff
    w = dext * ext
    flux = _upwind(vel, ext[:-1], ext[1:]) - (w[1:] - w[:-1]) / dx
    if not absorbing:
        flux[0] = flux[-1] = 0.0
    out = u - h / dx * (flux[1:] - flux[:-1])
    leaked = h * (flux[-1] - flux[0])
    return out, leaked


def fpe_step_2d(u, velx, vely, dxx, dyy, dxy, h, dx, dy, absorbing):
    """One explicit conservative step in 2D with a mixed second-order term.

    ``velx`` has shape ``(nx + 1, ny)``, ``vely`` shape ``(nx, ny + 1)``;
    ``dxx``, ``dyy``, ``dxy`` are ``kappa / 2 * a_ij`` at cell centres.
    """
    nx, ny = u.shape
    ext = np.zeros((nx + 2, ny + 2))
    ext[1:-1, 1:-1] = u

    def padded(c):
        out = np.zeros((nx + 2, ny + 2))
        out[1:-1, 1:-1] = c
        return out

    wxx = padded(dxx) * ext
    wyy = padded(dyy) * ext
    wxy = padded(dxy) * ext
    # d/dy of wxy at cell centres and d/dx of wxy at cell centres
    dwy = np.zeros_like(wxy)
    dwy[:, 1:-1] = (wxy[:, 2:] - wxy[:, :-2]) / (2 * dy)
    dwx = np.zeros_like(wxy)
    dwx[1:-1, :] = (wxy[2:, :] - wxy[:-2, :]) / (2 * dx)
    fx = (_upwind(velx, ext[:-1, 1:-1], ext[1:, 1:-1])
          - (wxx[1:, 1:-1] - wxx[:-1, 1:-1]) / dx
          - 0.5 * (dwy[1:, 1:-1] + dwy[:-1, 1:-1]))
    fy = (_upwind(vely, ext[1:-1, :-1], ext[1:-1, 1:])
          - (wyy[1:-1, 1:] - wyy[1:-1, :-1]) / dy
          - 0.5 * (dwx[1:-1, 1:] + dwx[1:-1, :-1]))
    if not absorbing:
        fx[0, :] = fx[-1, :] = 0.0
        fy[:, 0] = fy[:, -1] = 0.0
    out = u - h / dx * (fx[1:, :] - fx[:-1, :]) - h / dy * (fy[:, 1:] - fy[:, :-1])
    leaked = h * (dy * (fx[-1, :].sum() - fx[0, :].sum()) + dx * (fy[:, -1].sum() - fy[:, 0].sum()))
    return out, leaked
