"""Jitted inner loops: multilinear field evaluation and characteristic integrals."""

from __future__ import annotations

import numba
import numpy as np
from numba import njit


def set_worker_count(n: int) -> None:
    numba.set_num_threads(max(1, int(n)))


@njit(cache=True, inline="always")
def _locate(c: float, origin: float, step: float, size: int):
    """Clamped cell index and fraction for a uniform axis."""
    u = (c - origin) / step
    if u <= 0.0:
        return 0, 0.0
    if u >= size - 1:
        return size - 2, 1.0
    i = int(u)
    if i > size - 2:
        i = size - 2
    return i, u - i


@njit(cache=True, inline="always")
def _interp3(arr, it, ft, ix, fx, iy, fy):
    """Trilinear interpolation on a 3-d block given located indices."""
    c00 = arr[it, ix, iy] * (1 - fx) + arr[it, ix + 1, iy] * fx
    c01 = arr[it, ix, iy + 1] * (1 - fx) + arr[it, ix + 1, iy + 1] * fx
    c10 = arr[it + 1, ix, iy] * (1 - fx) + arr[it + 1, ix + 1, iy] * fx
    c11 = arr[it + 1, ix, iy + 1] * (1 - fx) + arr[it + 1, ix + 1, iy + 1] * fx
    return (c00 * (1 - fy) + c01 * fy) * (1 - ft) + (c10 * (1 - fy) + c11 * fy) * ft


@njit(cache=True)
def field_eval_points(values, t, x1, x2, v1, v2, t0, dt, x0, dx, v0, dv):
    """Pentalinear evaluation of a (t, x, v) tensor field, clamped to the hull."""
    nt, nx1, nx2, nv1, nv2 = values.shape
    npts = t.shape[0]
    out = np.empty(npts)
    for p in range(npts):
        it, ft = _locate(t[p], t0, dt, nt)
        ia, fa = _locate(x1[p], x0, dx, nx1)
        ib, fb = _locate(x2[p], x0, dx, nx2)
        ic, fc = _locate(v1[p], v0, dv, nv1)
        idd, fd = _locate(v2[p], v0, dv, nv2)
        acc = 0.0
        for kc in range(2):
            wc = fc if kc == 1 else 1.0 - fc
            if wc == 0.0:
                continue
            for kd in range(2):
                wd = fd if kd == 1 else 1.0 - fd
                if wd == 0.0:
                    continue
                block = values[:, :, :, ic + kc, idd + kd]
                acc += wc * wd * _interp3(block, it, ft, ia, fa, ib, fb)
        out[p] = acc
    return out


@njit(cache=True)
def line_integral_grid(src, taum, t_nodes, x_nodes, v_nodes, nq):
    """integral_0^{min(t, taum)} src(t - s, x - s v, v) ds at every grid node.

    src has shape (NT, NX, NX, NV, NV); taum has shape (NX, NX, NV, NV).
    Velocities are on-grid, so interpolation is trilinear in (t, x).
    Composite midpoint rule with nq nodes.
    """
    nt, nx, _, nv, _ = src.shape
    t0 = t_nodes[0]
    dt = t_nodes[1] - t_nodes[0]
    x0 = x_nodes[0]
    dx = x_nodes[1] - x_nodes[0]
    out = np.zeros_like(src)
    for ic in range(nv):
        for idd in range(nv):
            block = np.ascontiguousarray(src[:, :, :, ic, idd])
            w1 = v_nodes[ic]
            w2 = v_nodes[idd]
            for it_node in range(1, nt):
                t = t_nodes[it_node]
                for ia in range(nx):
                    xa = x_nodes[ia]
                    for ib in range(nx):
                        xb = x_nodes[ib]
                        smax = taum[ia, ib, ic, idd]
                        if t < smax:
                            smax = t
                        if smax <= 0.0:
                            continue
                        h = smax / nq
                        acc = 0.0
                        for q in range(nq):
                            s = (q + 0.5) * h
                            jt, ft = _locate(t - s, t0, dt, nt)
                            ja, fa = _locate(xa - s * w1, x0, dx, nx)
                            jb, fb = _locate(xb - s * w2, x0, dx, nx)
                            acc += _interp3(block, jt, ft, ja, fa, jb, fb)
                        out[it_node, ia, ib, ic, idd] = acc * h
    return out


@njit(cache=True)
def line_integral_points(src, t, x1, x2, v1, v2, taum, t_nodes, x_nodes, v_nodes, nq):
    """Characteristic source integral at arbitrary (t, x, v) query points.

    Velocity is off-grid: bilinear velocity weights are fixed per point, the
    inner loop interpolates trilinearly in (t, x) for each velocity corner.
    """
    nt, nx, _, nv, _ = src.shape
    t0 = t_nodes[0]
    dt = t_nodes[1] - t_nodes[0]
    x0 = x_nodes[0]
    dx = x_nodes[1] - x_nodes[0]
    v0 = v_nodes[0]
    dv = v_nodes[1] - v_nodes[0]
    npts = t.shape[0]
    out = np.zeros(npts)
    for p in range(npts):
        smax = taum[p]
        if t[p] < smax:
            smax = t[p]
        if smax <= 0.0:
            continue
        ic, fc = _locate(v1[p], v0, dv, nv)
        idd, fd = _locate(v2[p], v0, dv, nv)
        h = smax / nq
        acc = 0.0
        for q in range(nq):
            s = (q + 0.5) * h
            jt, ft = _locate(t[p] - s, t0, dt, nt)
            ja, fa = _locate(x1[p] - s * v1[p], x0, dx, nx)
            jb, fb = _locate(x2[p] - s * v2[p], x0, dx, nx)
            for kc in range(2):
                wc = fc if kc == 1 else 1.0 - fc
                if wc == 0.0:
                    continue
                for kd in range(2):
                    wd = fd if kd == 1 else 1.0 - fd
                    if wd == 0.0:
                        continue
                    acc += wc * wd * _interp3(
                        src[:, :, :, ic + kc, idd + kd], jt, ft, ja, fa, jb, fb
                    )
        out[p] = acc * h
    return out
