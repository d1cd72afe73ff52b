"""Numba implementations of the grid kernels.

All coordinates are in cell units, x = column, y = row. ``blocking`` is a
boolean ``(H, W)`` array. A ray starts at the continuous point ``(ox, oy)``
inside (or on the boundary of) the start cell ``(sx, sy)``; the start cell is
never tested for blocking.
"""

import math

import numpy as np
from numba import njit

from ._consts import CARVE_MARGIN, MIN_SECONDARY_T

_INF = np.inf


@njit(cache=True)
def _dda_init(o, d, c):
    if d > 0.0:
        t_max = (c + 1.0 - o) / d
        t_delta = 1.0 / d
        step = 1
    elif d < 0.0:
        t_max = (o - c) / (-d)
        t_delta = -1.0 / d
        step = -1
    else:
        t_max = _INF
        t_delta = _INF
        step = 0
    if t_max < 0.0:
        t_max = 0.0
    return t_max, t_delta, step


@njit(cache=True)
def _cast_one(blocking, ox, oy, dx, dy, cx, cy, max_t):
    h, w = blocking.shape
    tmx, tdx, stx = _dda_init(ox, dx, cx)
    tmy, tdy, sty = _dda_init(oy, dy, cy)
    px, py = cx, cy
    while True:
        if tmx < tmy:
            t = tmx
            cx += stx
            tmx += tdx
            face = 0
        else:
            t = tmy
            cy += sty
            tmy += tdy
            face = 1
        if t > max_t or cx < 0 or cx >= w or cy < 0 or cy >= h:
            return -1, -1, _INF, px, py, -1
        if blocking[cy, cx]:
            return cx, cy, t, px, py, face
        px, py = cx, cy


@njit(cache=True)
def cast_rays(blocking, ox, oy, dx, dy, sx, sy, max_t):
    n = ox.shape[0]
    hx = np.empty(n, np.int64)
    hy = np.empty(n, np.int64)
    t = np.empty(n, np.float64)
    px = np.empty(n, np.int64)
    py = np.empty(n, np.int64)
    face = np.empty(n, np.int64)
    for i in range(n):
        r = _cast_one(blocking, ox[i], oy[i], dx[i], dy[i], sx[i], sy[i], max_t)
        hx[i], hy[i], t[i], px[i], py[i], face[i] = r
    return hx, hy, t, px, py, face


@njit(cache=True)
def mark_rays(blocking, ox, oy, dx, dy, sx, sy, max_t, out):
    """Mark every cell entered at ``t <= max_t`` up to and including the first blocker."""
    h, w = blocking.shape
    for i in range(ox.shape[0]):
        cx = sx[i]
        cy = sy[i]
        out[cy, cx] = True
        tmx, tdx, stx = _dda_init(ox[i], dx[i], cx)
        tmy, tdy, sty = _dda_init(oy[i], dy[i], cy)
        while True:
            if tmx < tmy:
                t = tmx
                cx += stx
                tmx += tdx
            else:
                t = tmy
                cy += sty
                tmy += tdy
            if t > max_t or cx < 0 or cx >= w or cy < 0 or cy >= h:
                break
            out[cy, cx] = True
            if blocking[cy, cx]:
                break


@njit(cache=True)
def carve_fans(blocking, carvable, ox, oy, sx, sy, nx, ny, radius, fan_c, fan_s, out):
    """Cells certified empty by the secondary fans of each ray.

    Ray ``i`` sends one sub-ray per fan angle (given as cos/sin) from
    ``(ox, oy)``, rotated off the normal ``(nx, ny)`` exactly as the
    simulator does. Every carvable cell a sub-ray enters at ``t < radius``
    before meeting a blocker, strictly on the normal side, is set in
    ``out``. A sub-ray whose first cell is entered at ``t <= 1e-9`` stops
    there unless that cell is known free: the simulator discards such hits.
    """
    h, w = blocking.shape
    for i in range(ox.shape[0]):
        r = radius[i] - CARVE_MARGIN
        if not r > 0.0:
            continue
        for k in range(fan_c.shape[0]):
            c = fan_c[k]
            s = fan_s[k]
            dx = nx[i] * c - ny[i] * s
            dy = nx[i] * s + ny[i] * c
            cx = sx[i]
            cy = sy[i]
            tmx, tdx, stx = _dda_init(ox[i], dx, cx)
            tmy, tdy, sty = _dda_init(oy[i], dy, cy)
            while True:
                if tmx < tmy:
                    t = tmx
                    cx += stx
                    tmx += tdx
                else:
                    t = tmy
                    cy += sty
                    tmy += tdy
                if t >= r or cx < 0 or cx >= w or cy < 0 or cy >= h:
                    break
                if blocking[cy, cx]:
                    break
                if carvable[cy, cx]:
                    if t <= MIN_SECONDARY_T:
                        break
                    ex = cx + 0.5 - ox[i]
                    ey = cy + 0.5 - oy[i]
                    if ex * nx[i] + ey * ny[i] > 0.0:
                        out[cy, cx] = True


@njit(cache=True)
def backproject_arcs(blocking, support, cx, cy, sx, sy, nx, ny, ray_start, radius, weight, out):
    """Accumulate half-circle arcs, visibility-limited per relay point.

    Arcs are grouped by relay point: arcs ``ray_start[i]:ray_start[i + 1]``
    share centre ``(cx[i], cy[i])``, start cell and normal. A per-relay table
    of distances to the first ``blocking`` cell, over a fan fine enough for
    the largest radius, gates each arc sample; samples must also land on a
    ``support`` cell. Each arc adds its weight once per cell it touches.
    """
    h, w = out.shape
    stamp = np.zeros((h, w), np.int64)
    for i in range(cx.shape[0]):
        a0 = ray_start[i]
        a1 = ray_start[i + 1]
        r_max = 0.0
        for a in range(a0, a1):
            if radius[a] > r_max:
                r_max = radius[a]
        if not r_max > 0.0:
            continue
        n_dir = int(math.ceil(2.0 * math.pi * r_max)) + 1
        reach = np.empty(n_dir)
        for j in range(n_dir):
            phi = -0.5 * math.pi + math.pi * (j + 0.5) / n_dir
            c = math.cos(phi)
            s = math.sin(phi)
            dx = nx[i] * c - ny[i] * s
            dy = nx[i] * s + ny[i] * c
            hit = _cast_one(blocking, cx[i], cy[i], dx, dy, sx[i], sy[i], r_max)
            reach[j] = hit[2]
        for a in range(a0, a1):
            r = radius[a]
            if not r > 0.0:
                continue
            n = int(math.ceil(2.0 * math.pi * r)) + 1
            for k in range(n):
                u = (k + 0.5) / n
                j = int(u * n_dir)
                if j >= n_dir:
                    j = n_dir - 1
                if not r < reach[j]:
                    continue
                phi = -0.5 * math.pi + math.pi * u
                c = math.cos(phi)
                s = math.sin(phi)
                px = cx[i] + r * (nx[i] * c - ny[i] * s)
                py = cy[i] + r * (nx[i] * s + ny[i] * c)
                ix = int(math.floor(px))
                iy = int(math.floor(py))
                if ix < 0 or ix >= w or iy < 0 or iy >= h:
                    continue
                if support[iy, ix] and stamp[iy, ix] != a + 1:
                    stamp[iy, ix] = a + 1
                    out[iy, ix] += weight[a]
