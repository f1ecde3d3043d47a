"""Exact 1D total-variation denoising and its row/column sweeps over a cube.

``tv1d`` is the direct (taut-string style) algorithm of Condat: it returns
``argmin_x 0.5 ||x - y||^2 + lam sum |x[i+1] - x[i]|`` exactly in linear
time for typical inputs. Rounding with a weight far below the data's
resolution can push the run pointer past the end, so every fill is
bounds-guarded.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def tv1d(y, lam, out):
    n = y.shape[0]
    if n == 0:
        return
    if lam <= 0.0 or n == 1:
        for i in range(n):
            out[i] = y[i]
        return
    k = 0
    k0 = 0
    kplus = 0
    kminus = 0
    umin = lam
    umax = -lam
    vmin = y[0] - lam
    vmax = y[0] + lam
    twolam = 2.0 * lam
    minlam = -lam
    while True:
        while k == n - 1:
            if umin < 0.0:
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > kminus or k0 == n:
                        break
                if k0 == n:
                    return
                k = k0
                kminus = k0
                vmin = y[k0]
                umin = lam
                umax = vmin + umin - vmax
            elif umax > 0.0:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus or k0 == n:
                        break
                if k0 == n:
                    return
                k = k0
                kplus = k0
                vmax = y[k0]
                umax = minlam
                umin = vmax + umax - vmin
            else:
                vmin += umin / (k - k0 + 1)
                while True:
                    out[k0] = vmin
                    k0 += 1
                    if k0 > k or k0 == n:
                        break
                return
        umin += y[k + 1] - vmin
        if umin < minlam:
            while True:
                out[k0] = vmin
                k0 += 1
                if k0 > kminus or k0 == n:
                    break
            if k0 == n:
                return
            k = k0
            kplus = k0
            kminus = k0
            vmin = y[k0]
            vmax = vmin + twolam
            umin = lam
            umax = minlam
        else:
            umax += y[k + 1] - vmax
            if umax > lam:
                while True:
                    out[k0] = vmax
                    k0 += 1
                    if k0 > kplus or k0 == n:
                        break
                if k0 == n:
                    return
                k = k0
                kplus = k0
                kminus = k0
                vmax = y[k0]
                vmin = vmax - twolam
                umin = lam
                umax = minlam
            else:
                k += 1
                if umin >= lam:
                    kminus = k
                    vmin += (umin - lam) / (kminus - k0 + 1)
                    umin = lam
                if umax <= minlam:
                    kplus = k
                    vmax += (umax + lam) / (kplus - k0 + 1)
                    umax = minlam


@njit(cache=True)
def tv_rows(x, lam, out):
    """1D TV denoising along axis 1 of an (ny, nx, nt) array."""
    ny, nx, nt = x.shape
    buf = np.empty(nx)
    res = np.empty(nx)
    for i in range(ny):
        for k in range(nt):
            for j in range(nx):
                buf[j] = x[i, j, k]
            tv1d(buf, lam, res)
            for j in range(nx):
                out[i, j, k] = res[j]


@njit(cache=True)
def tv_cols(x, lam, out):
    """1D TV denoising along axis 0 of an (ny, nx, nt) array."""
    ny, nx, nt = x.shape
    buf = np.empty(ny)
    res = np.empty(ny)
    for j in range(nx):
        for k in range(nt):
            for i in range(ny):
                buf[i] = x[i, j, k]
            tv1d(buf, lam, res)
            for i in range(ny):
                out[i, j, k] = res[i]
