"""Vectorized numpy versions of the grid kernels.

Every ray is advanced in lockstep one cell per iteration, with the same
floating-point update sequence as the compiled kernels so results agree
bit for bit.
"""

import math

import numpy as np

from ._consts import CARVE_MARGIN, MIN_SECONDARY_T

# rays or arc samples processed per vectorized batch
_CHUNK = 1 << 18


def _dda_init(o, d, c):
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = d > 0.0
        neg = d < 0.0
        t_max = np.full(d.shape, np.inf)
        t_max[pos] = (c[pos] + 1.0 - o[pos]) / d[pos]
        t_max[neg] = (o[neg] - c[neg]) / (-d[neg])
        t_delta = np.full(d.shape, np.inf)
        t_delta[pos] = 1.0 / d[pos]
        t_delta[neg] = -1.0 / d[neg]
    step = np.where(pos, 1, np.where(neg, -1, 0)).astype(np.int64)
    np.maximum(t_max, 0.0, out=t_max)
    return t_max, t_delta, step


class _Walker:
    """Lockstep DDA state for a batch of rays."""

    def __init__(self, ox, oy, dx, dy, sx, sy):
        self.idx = np.arange(ox.shape[0])
        self.cx = np.asarray(sx, np.int64).copy()
        self.cy = np.asarray(sy, np.int64).copy()
        self.px = self.cx.copy()
        self.py = self.cy.copy()
        self.tmx, self.tdx, self.stx = _dda_init(ox, dx, self.cx.astype(np.float64))
        self.tmy, self.tdy, self.sty = _dda_init(oy, dy, self.cy.astype(np.float64))

    def step(self):
        """Advance all live rays one cell; return entry t and the face crossed."""
        use_x = self.tmx < self.tmy
        use_y = ~use_x
        t = np.where(use_x, self.tmx, self.tmy)
        self.px = self.cx.copy()
        self.py = self.cy.copy()
        self.cx[use_x] += self.stx[use_x]
        self.cy[use_y] += self.sty[use_y]
        self.tmx[use_x] += self.tdx[use_x]
        self.tmy[use_y] += self.tdy[use_y]
        return t, np.where(use_x, 0, 1)

    def keep(self, mask):
        for name in ("idx", "cx", "cy", "px", "py", "tmx", "tdx", "stx", "tmy", "tdy", "sty"):
            setattr(self, name, getattr(self, name)[mask])

    def __len__(self):
        return self.idx.shape[0]


def _in_bounds(shape, cx, cy):
    h, w = shape
    return (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)


def cast_rays(blocking, ox, oy, dx, dy, sx, sy, max_t):
    n = ox.shape[0]
    hx = np.full(n, -1, np.int64)
    hy = np.full(n, -1, np.int64)
    t_hit = np.full(n, np.inf)
    px = np.asarray(sx, np.int64).copy()
    py = np.asarray(sy, np.int64).copy()
    face = np.full(n, -1, np.int64)
    wk = _Walker(ox, oy, dx, dy, sx, sy)
    while len(wk):
        t, fc = wk.step()
        live = (t <= max_t) & _in_bounds(blocking.shape, wk.cx, wk.cy)
        # rays that stopped without a hit keep the last free cell they were in
        dead = ~live
        px[wk.idx[dead]] = wk.px[dead]
        py[wk.idx[dead]] = wk.py[dead]
        hit = np.zeros_like(live)
        hit[live] = blocking[wk.cy[live], wk.cx[live]]
        j = wk.idx[hit]
        hx[j] = wk.cx[hit]
        hy[j] = wk.cy[hit]
        t_hit[j] = t[hit]
        px[j] = wk.px[hit]
        py[j] = wk.py[hit]
        face[j] = fc[hit]
        wk.keep(live & ~hit)
    return hx, hy, t_hit, px, py, face


def mark_rays(blocking, ox, oy, dx, dy, sx, sy, max_t, out):
    for lo in range(0, ox.shape[0], _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        wk = _Walker(ox[sl], oy[sl], dx[sl], dy[sl], sx[sl], sy[sl])
        out[wk.cy, wk.cx] = True
        while len(wk):
            t, _ = wk.step()
            live = (t <= max_t) & _in_bounds(blocking.shape, wk.cx, wk.cy)
            wk.keep(live)
            out[wk.cy, wk.cx] = True
            wk.keep(~blocking[wk.cy, wk.cx])


def _chunks_by_count(counts, limit):
    """Split ray indices so each chunk expands to at most ``limit`` sub-rays."""
    bounds = [0]
    acc = 0
    for i, c in enumerate(counts):
        if acc and acc + c > limit:
            bounds.append(i)
            acc = 0
        acc += c
    bounds.append(len(counts))
    return zip(bounds[:-1], bounds[1:])


def carve_fans(blocking, carvable, ox, oy, sx, sy, nx, ny, radius, fan_c, fan_s, out):
    r = radius - CARVE_MARGIN
    rays = np.nonzero(r > 0.0)[0]
    m = fan_c.shape[0]
    per = max(1, _CHUNK // max(m, 1))
    for lo in range(0, rays.shape[0], per):
        owner = np.repeat(rays[lo:lo + per], m)
        c = np.tile(fan_c, owner.shape[0] // m)
        s = np.tile(fan_s, owner.shape[0] // m)
        gnx, gny = nx[owner], ny[owner]
        dx = gnx * c - gny * s
        dy = gnx * s + gny * c
        gox, goy, gr = ox[owner], oy[owner], r[owner]
        wk = _Walker(gox, goy, dx, dy, sx[owner], sy[owner])
        while len(wk):
            t, _ = wk.step()
            live = (t < gr[wk.idx]) & _in_bounds(blocking.shape, wk.cx, wk.cy)
            wk.keep(live)
            t = t[live]
            go = ~blocking[wk.cy, wk.cx]
            wk.keep(go)
            t = t[go]
            unk = carvable[wk.cy, wk.cx]
            go = ~(unk & (t <= MIN_SECONDARY_T))
            wk.keep(go)
            unk = unk[go]
            i = wk.idx
            cx, cy = wk.cx, wk.cy
            ex = cx + 0.5 - gox[i]
            ey = cy + 0.5 - goy[i]
            ok = unk & (ex * gnx[i] + ey * gny[i] > 0.0)
            out[cy[ok], cx[ok]] = True


def _fan_dirs(nx, ny, counts):
    """Unit directions of ``counts[i]`` evenly spaced fan samples about each normal."""
    owner = np.repeat(np.arange(counts.shape[0]), counts)
    starts = np.cumsum(counts) - counts
    k = np.arange(owner.shape[0]) - starts[owner]
    u = (k + 0.5) / counts[owner].astype(np.float64)
    phi = -0.5 * math.pi + math.pi * u
    c = np.cos(phi)
    s = np.sin(phi)
    return owner, u, nx[owner] * c - ny[owner] * s, nx[owner] * s + ny[owner] * c


def backproject_arcs(blocking, support, cx, cy, sx, sy, nx, ny, ray_start, radius, weight, out):
    h, w = out.shape
    flat = out.reshape(-1)
    n_rel = cx.shape[0]
    arc_owner = np.repeat(np.arange(n_rel), np.diff(ray_start))
    r_max = np.zeros(n_rel)
    pos = radius > 0.0
    np.maximum.at(r_max, arc_owner[pos], radius[pos])
    n_dir = np.where(r_max > 0.0, np.ceil(2.0 * math.pi * r_max) + 1, 0).astype(np.int64)

    # distance to the first blocker for every relay fan direction
    d_owner, _, ddx, ddy = _fan_dirs(nx, ny, n_dir)
    reach = np.empty(d_owner.shape[0])
    for lo in range(0, d_owner.shape[0], _CHUNK):
        o = d_owner[lo:lo + _CHUNK]
        reach[lo:lo + _CHUNK] = _cast_bounded(blocking, cx[o], cy[o], ddx[lo:lo + _CHUNK],
                                              ddy[lo:lo + _CHUNK], sx[o], sy[o], r_max[o])
    dir_start = np.cumsum(n_dir) - n_dir

    n_arc = np.where(pos, np.ceil(2.0 * math.pi * np.where(pos, radius, 0.0)) + 1, 0).astype(np.int64)
    for lo, hi in _chunks_by_count(n_arc.tolist(), _CHUNK):
        a_loc, u, ux, uy = _fan_dirs(np.zeros(hi - lo), np.zeros(hi - lo), n_arc[lo:hi])
        a = a_loc + lo
        rel = arc_owner[a]
        j = np.minimum((u * n_dir[rel]).astype(np.int64), n_dir[rel] - 1)
        r = radius[a]
        ok = r < reach[dir_start[rel] + j]
        a, rel, u, r = a[ok], rel[ok], u[ok], r[ok]
        phi = -0.5 * math.pi + math.pi * u
        c = np.cos(phi)
        s = np.sin(phi)
        px = cx[rel] + r * (nx[rel] * c - ny[rel] * s)
        py = cy[rel] + r * (nx[rel] * s + ny[rel] * c)
        ix = np.floor(px).astype(np.int64)
        iy = np.floor(py).astype(np.int64)
        ok = _in_bounds((h, w), ix, iy)
        a, ix, iy = a[ok], ix[ok], iy[ok]
        ok = support[iy, ix]
        key = np.unique(a[ok] * (h * w) + iy[ok] * w + ix[ok])
        np.add.at(flat, key % (h * w), weight[key // (h * w)])


def _cast_bounded(blocking, ox, oy, dx, dy, sx, sy, max_t):
    """Entry distance of the first blocker, inf beyond per-ray ``max_t``."""
    t_hit = np.full(ox.shape[0], np.inf)
    wk = _Walker(ox, oy, dx, dy, sx, sy)
    while len(wk):
        t, _ = wk.step()
        live = (t <= max_t[wk.idx]) & _in_bounds(blocking.shape, wk.cx, wk.cy)
        wk.keep(live)
        hit = blocking[wk.cy, wk.cx]
        t_hit[wk.idx[hit]] = t[live][hit]
        wk.keep(~hit)
    return t_hit
