# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops; see ``_fallback`` for the reference."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()


def maximal_2d(double[:, ::1] a, double hx, double hy, double[::1] radii):
    cdef Py_ssize_t nx = a.shape[0], ny = a.shape[1]
    cdef Py_ssize_t i, j, k, di, src, lo, hi, ri, w, count
    cdef double r, rem, total
    prefix_arr = np.zeros((nx, ny + 1))
    best_arr = np.zeros((nx, ny))
    cdef double[:, ::1] prefix = prefix_arr
    cdef double[:, ::1] best = best_arr
    cdef Py_ssize_t[::1] half
    for i in range(nx):
        for j in range(ny):
            prefix[i, j + 1] = prefix[i, j] + a[i, j]
    for k in range(radii.shape[0]):
        r = radii[k]
        ri = <Py_ssize_t>floor(r / hx)
        # half-width of the disc row at offset di; -1 marks an empty row
        half = np.full(2 * ri + 1, -1, dtype=np.intp)
        count = 0
        for di in range(-ri, ri + 1):
            rem = r * r - (di * hx) * (di * hx)
            if rem >= 0:
                half[di + ri] = <Py_ssize_t>floor(sqrt(rem) / hy)
                count += 2 * half[di + ri] + 1
        for i in range(nx):
            for j in range(ny):
                total = 0.0
                for di in range(-ri, ri + 1):
                    src = i + di
                    w = half[di + ri]
                    if src < 0 or src >= nx or w < 0:
                        continue
                    lo = j - w
                    hi = j + w + 1
                    if lo < 0:
                        lo = 0
                    if hi > ny:
                        hi = ny
                    if hi > lo:
                        total += prefix[src, hi] - prefix[src, lo]
                total /= count
                if total > best[i, j]:
                    best[i, j] = total
    return best_arr


cdef inline double upwind(double v, double left, double right):
    if v > 0:
        return v * left
    return v * right


def fpe_step_1d(double[::1] u, double[::1] vel, double[::1] diff, double h, double dx, bint absorbing):
    cdef Py_ssize_t n = u.shape[0], i
    out_arr = np.empty(n)
    flux_arr = np.empty(n + 1)
    cdef double[::1] out = out_arr
    cdef double[::1] flux = flux_arr
    cdef double left, right, wl, wr
    for i in range(n + 1):
        if i == 0:
            left = 0.0
            wl = 0.0
        else:
            left = u[i - 1]
            wl = diff[i - 1] * u[i - 1]
        if i == n:
            right = 0.0
            wr = 0.0
        else:
            right = u[i]
            wr = diff[i] * u[i]
        flux[i] = upwind(vel[i], left, right) - (wr - wl) / dx
    if not absorbing:
        flux[0] = 0.0
        flux[n] = 0.0
    for i in range(n):
        out[i] = u[i] - h / dx * (flux[i + 1] - flux[i])
    return out_arr, h * (flux[n] - flux[0])


def fpe_step_2d(double[:, ::1] u, double[:, ::1] velx, double[:, ::1] vely,
                double[:, ::1] dxx, double[:, ::1] dyy, double[:, ::1] dxy,
                double h, double dx, double dy, bint absorbing):
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], i, j
    ext_arr = np.zeros((nx + 2, ny + 2))
    wxy_arr = np.zeros((nx + 2, ny + 2))
    fx_arr = np.zeros((nx + 1, ny))
    fy_arr = np.zeros((nx, ny + 1))
    out_arr = np.empty((nx, ny))
    cdef double[:, ::1] ext = ext_arr
    cdef double[:, ::1] wxy = wxy_arr
    cdef double[:, ::1] fx = fx_arr
    cdef double[:, ::1] fy = fy_arr
    cdef double[:, ::1] out = out_arr
    cdef double left, right, wl, wr, cross_l, cross_r, leaked = 0.0
    for i in range(nx):
        for j in range(ny):
            ext[i + 1, j + 1] = u[i, j]
            wxy[i + 1, j + 1] = dxy[i, j] * u[i, j]
    for i in range(nx + 1):
        for j in range(ny):
            left = ext[i, j + 1]
            right = ext[i + 1, j + 1]
            wl = dxx[i - 1, j] * left if i > 0 else 0.0
            wr = dxx[i, j] * right if i < nx else 0.0
            cross_l = (wxy[i, j + 2] - wxy[i, j]) / (2 * dy) if i > 0 else 0.0
            cross_r = (wxy[i + 1, j + 2] - wxy[i + 1, j]) / (2 * dy) if i < nx else 0.0
            fx[i, j] = upwind(velx[i, j], left, right) - (wr - wl) / dx - 0.5 * (cross_l + cross_r)
    for i in range(nx):
        for j in range(ny + 1):
            left = ext[i + 1, j]
            right = ext[i + 1, j + 1]
            wl = dyy[i, j - 1] * left if j > 0 else 0.0
            wr = dyy[i, j] * right if j < ny else 0.0
            cross_l = (wxy[i + 2, j] - wxy[i, j]) / (2 * dx) if j > 0 else 0.0
            cross_r = (wxy[i + 2, j + 1] - wxy[i, j + 1]) / (2 * dx) if j < ny else 0.0
            fy[i, j] = upwind(vely[i, j], left, right) - (wr - wl) / dy - 0.5 * (cross_l + cross_r)
    if not absorbing:
        for j in range(ny):
            fx[0, j] = 0.0
            fx[nx, j] = 0.0
        for i in range(nx):
            fy[i, 0] = 0.0
            fy[i, ny] = 0.0
    for i in range(nx):
        for j in range(ny):
            out[i, j] = u[i, j] - h / dx * (fx[i + 1, j] - fx[i, j]) - h / dy * (fy[i, j + 1] - fy[i, j])
    for j in range(ny):
        leaked += dy * (fx[nx, j] - fx[0, j])
    for i in range(nx):
        leaked += dx * (fy[i, ny] - fy[i, 0])
    return out_arr, h * leaked
