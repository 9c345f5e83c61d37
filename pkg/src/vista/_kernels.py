"""Compiled ray-traversal kernels.

Everything here is numba-jitted and operates on bare arrays; the public
wrappers live in voxelgrid.py and simenv.py. The traversal is the
classic incremental grid walk: track the ray parameter t at which the ray
crosses the next cell boundary along each axis and repeatedly advance the
axis with the smallest crossing. Exact ties advance several axes at once,
so a ray through a cell corner does not visit zero-chord cells.

Cell convention: voxel (i, j, k) spans [origin + i*res, origin + (i+1)*res)
per axis. Depth values are the ray parameter t (Euclidean range for unit
directions) at entry into the terminal cell.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# voxel states
UNOBSERVED = 0
FREE = 1
OCCUPIED = 2

# termination causes
HIT_OCCUPIED = 0
HIT_UNOBSERVED = 1
EXITED_GRID = 2
MAX_RANGE = 3

# direction codebook grid (must match codebook.py)
_GRID_U = 12
_GRID_V = 8

_ONE = np.uint64(1)
_NUDGE = 1e-9  # fraction of a cell used to disambiguate boundary starts


@njit(cache=True)
def _clip_interval(o, d, origin, res, nx, ny, nz, max_range):
    """Intersect the ray [0, max_range] with the grid box.

    Returns (t0, t_end, range_limited, status):
    status 0 = ok, 1 = misses/behind grid, 2 = grid beyond max_range.
    """
    ta0 = -1.0e300
    ta1 = 1.0e300
    for ax in range(3):
        if ax == 0:
            n = nx
        elif ax == 1:
            n = ny
        else:
            n = nz
        lo = origin[ax]
        hi = origin[ax] + res * n
        da = d[ax]
        if da != 0.0:
            inv = 1.0 / da
            t_a = (lo - o[ax]) * inv
            t_b = (hi - o[ax]) * inv
            if t_a > t_b:
                t_a, t_b = t_b, t_a
            if t_a > ta0:
                ta0 = t_a
            if t_b < ta1:
                ta1 = t_b
        else:
            if o[ax] < lo or o[ax] >= hi:
                return 0.0, 0.0, False, 1
    t0 = ta0 if ta0 > 0.0 else 0.0
    if ta1 <= t0:
        return 0.0, 0.0, False, 1
    if t0 >= max_range:
        return 0.0, 0.0, False, 2
    if max_range < ta1:
        return t0, max_range, True, 0
    return t0, ta1, False, 0


@njit(cache=True)
def _start_cell(o, d, t0, origin, res, nx, ny, nz):
    """Cell containing the entry point, nudged forward off boundaries."""
    eps = _NUDGE * res
    ix = int(np.floor((o[0] + d[0] * (t0 + eps) - origin[0]) / res))
    iy = int(np.floor((o[1] + d[1] * (t0 + eps) - origin[1]) / res))
    iz = int(np.floor((o[2] + d[2] * (t0 + eps) - origin[2]) / res))
    if ix < 0:
        ix = 0
    elif ix > nx - 1:
        ix = nx - 1
    if iy < 0:
        iy = 0
    elif iy > ny - 1:
        iy = ny - 1
    if iz < 0:
        iz = 0
    elif iz > nz - 1:
        iz = nz - 1
    return ix, iy, iz


@njit(cache=True)
def _axis_setup(o, d, i, origin, res):
    """Step sign, t to next boundary, and t per cell for one axis."""
    if d > 0.0:
        step = 1
        t_max = (origin + (i + 1) * res - o) / d
        t_delta = res / d
    elif d < 0.0:
        step = -1
        t_max = (origin + i * res - o) / d
        t_delta = -res / d
    else:
        step = 0
        t_max = 1.0e300
        t_delta = 1.0e300
    return step, t_max, t_delta


@njit(cache=True)
def traverse_fill(o, d, max_range, state, origin, res, stop_unobserved,
                  out_idx):
    """Walk one ray, storing visited cells into out_idx (N, 3).

    Returns (count, cause, t_hit). t_hit is the entry t of the terminal
    voxel for hit causes, -1 otherwise.
    """
    nx, ny, nz = state.shape
    t0, t_end, range_limited, status = _clip_interval(
        o, d, origin, res, nx, ny, nz, max_range)
    if status == 1:
        return 0, EXITED_GRID, -1.0
    if status == 2:
        return 0, MAX_RANGE, -1.0

    ix, iy, iz = _start_cell(o, d, t0, origin, res, nx, ny, nz)
    sx, tmx, tdx = _axis_setup(o[0], d[0], ix, origin[0], res)
    sy, tmy, tdy = _axis_setup(o[1], d[1], iy, origin[1], res)
    sz, tmz, tdz = _axis_setup(o[2], d[2], iz, origin[2], res)

    t_enter = t0
    count = 0
    while True:
        out_idx[count, 0] = ix
        out_idx[count, 1] = iy
        out_idx[count, 2] = iz
        count += 1
        s = state[ix, iy, iz]
        if s == OCCUPIED:
            return count, HIT_OCCUPIED, t_enter
        if stop_unobserved and s == UNOBSERVED:
            return count, HIT_UNOBSERVED, t_enter
        tm = tmx
        if tmy < tm:
            tm = tmy
        if tmz < tm:
            tm = tmz
        if tm >= t_end:
            if range_limited:
                return count, MAX_RANGE, -1.0
            return count, EXITED_GRID, -1.0
        if tmx == tm:
            ix += sx
            tmx += tdx
        if tmy == tm:
            iy += sy
            tmy += tdy
        if tmz == tm:
            iz += sz
            tmz += tdz
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return count, EXITED_GRID, -1.0
        t_enter = tm


@njit(cache=True)
def _terminal(o, d, max_range, state, origin, res, stop_unobserved):
    """Like traverse_fill without recording the sequence.

    Returns (cause, t_hit, ix, iy, iz); the cell is the last visited one,
    or (-1, -1, -1) when the ray never entered the grid.
    """
    nx, ny, nz = state.shape
    t0, t_end, range_limited, status = _clip_interval(
        o, d, origin, res, nx, ny, nz, max_range)
    if status == 1:
        return EXITED_GRID, -1.0, -1, -1, -1
    if status == 2:
        return MAX_RANGE, -1.0, -1, -1, -1

    ix, iy, iz = _start_cell(o, d, t0, origin, res, nx, ny, nz)
    sx, tmx, tdx = _axis_setup(o[0], d[0], ix, origin[0], res)
    sy, tmy, tdy = _axis_setup(o[1], d[1], iy, origin[1], res)
    sz, tmz, tdz = _axis_setup(o[2], d[2], iz, origin[2], res)

    t_enter = t0
    while True:
        s = state[ix, iy, iz]
        if s == OCCUPIED:
            return HIT_OCCUPIED, t_enter, ix, iy, iz
        if stop_unobserved and s == UNOBSERVED:
            return HIT_UNOBSERVED, t_enter, ix, iy, iz
        tm = tmx
        if tmy < tm:
            tm = tmy
        if tmz < tm:
            tm = tmz
        if tm >= t_end:
            if range_limited:
                return MAX_RANGE, -1.0, ix, iy, iz
            return EXITED_GRID, -1.0, ix, iy, iz
        px, py, pz = ix, iy, iz
        if tmx == tm:
            ix += sx
            tmx += tdx
        if tmy == tm:
            iy += sy
            tmy += tdy
        if tmz == tm:
            iz += sz
            tmz += tdz
        if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
            return EXITED_GRID, -1.0, px, py, pz
        t_enter = tm


@njit(cache=True)
def _mask_gain(mask0, mask1, codebook, dx, dy, dz):
    """View-diversity gain of direction d against a direction bitmask.

    gain = (min over stored v of -v.d + 1) / 2 = (1 - max v.d) / 2;
    an empty mask means no recorded views and scores maximal gain 1.
    """
    maxdot = -2.0
    for w in range(2):
        word = mask0 if w == 0 else mask1
        base = w * 64
        b = 0
        while word != np.uint64(0):
            if word & _ONE:
                idx = base + b
                dot = (codebook[idx, 0] * dx + codebook[idx, 1] * dy
                       + codebook[idx, 2] * dz)
                if dot > maxdot:
                    maxdot = dot
            word >>= _ONE
            b += 1
    if maxdot < -1.5:
        return 1.0
    return (1.0 - maxdot) * 0.5


@njit(cache=True)
def render_kernel(state, semantic, color, dirmask, codebook, origin, res,
                  o, dirs, max_range, depth_out, sem_out, gain_out,
                  color_out, term_out):
    """Render all channels for a bundle of rays from one origin.

    term_out[r] = (cause, ix, iy, iz) of the last visited cell.
    """
    n = dirs.shape[0]
    for r in range(n):
        d0, d1, d2 = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        cause, t_hit, ix, iy, iz = _terminal(
            o, dirs[r], max_range, state, origin, res, True)
        term_out[r, 0] = cause
        term_out[r, 1] = ix
        term_out[r, 2] = iy
        term_out[r, 3] = iz
        if cause == HIT_OCCUPIED:
            depth_out[r] = t_hit
            sem_out[r] = semantic[ix, iy, iz]
            gain_out[r] = _mask_gain(dirmask[ix, iy, iz, 0],
                                     dirmask[ix, iy, iz, 1],
                                     codebook, d0, d1, d2)
            color_out[r, 0] = color[ix, iy, iz, 0]
            color_out[r, 1] = color[ix, iy, iz, 1]
            color_out[r, 2] = color[ix, iy, iz, 2]
        elif cause == HIT_UNOBSERVED:
            depth_out[r] = t_hit
            sem_out[r] = 0.0
            gain_out[r] = 1.0
            color_out[r, 0] = 0.0
            color_out[r, 1] = 0.0
            color_out[r, 2] = 0.0
        else:
            depth_out[r] = -1.0
            sem_out[r] = 0.0
            gain_out[r] = 0.0
            color_out[r, 0] = 0.0
            color_out[r, 1] = 0.0
            color_out[r, 2] = 0.0


@njit(cache=True)
def carve_kernel(state, origin, res, o, dirs, ranges):
    """Mark unobserved cells seen through by each ray as free.

    Rays pass through unobserved space (carving mode), stop at occupied
    cells, and never free the cell in which a range cap lands, so the
    sensed surface cell itself is left for point-cloud integration.
    """
    nx, ny, nz = state.shape
    n = dirs.shape[0]
    for r in range(n):
        max_range = ranges[r]
        if max_range <= 0.0:
            continue
        d = dirs[r]
        t0, t_end, range_limited, status = _clip_interval(
            o, d, origin, res, nx, ny, nz, max_range)
        if status != 0:
            continue
        ix, iy, iz = _start_cell(o, d, t0, origin, res, nx, ny, nz)
        sx, tmx, tdx = _axis_setup(o[0], d[0], ix, origin[0], res)
        sy, tmy, tdy = _axis_setup(o[1], d[1], iy, origin[1], res)
        sz, tmz, tdz = _axis_setup(o[2], d[2], iz, origin[2], res)
        while True:
            s = state[ix, iy, iz]
            if s == OCCUPIED:
                break
            tm = tmx
            if tmy < tm:
                tm = tmy
            if tmz < tm:
                tm = tmz
            if tm >= t_end:
                # fully traversed up to the grid boundary: seen through;
                # a range-capped ray ends inside this cell: leave it
                if not range_limited and s == UNOBSERVED:
                    state[ix, iy, iz] = FREE
                break
            if s == UNOBSERVED:
                state[ix, iy, iz] = FREE
            if tmx == tm:
                ix += sx
                tmx += tdx
            if tmy == tm:
                iy += sy
                tmy += tdy
            if tmz == tm:
                iz += sz
                tmz += tdz
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                break


@njit(cache=True)
def _quantize_dir(dx, dy, dz):
    """Octahedral-map bin index of a unit direction (matches codebook.py)."""
    a = abs(dx) + abs(dy) + abs(dz)
    px = dx / a
    py = dy / a
    pz = dz / a
    if pz < 0.0:
        fx = (1.0 - abs(py)) * (1.0 if px >= 0.0 else -1.0)
        fy = (1.0 - abs(px)) * (1.0 if py >= 0.0 else -1.0)
        px = fx
        py = fy
    u = px * 0.5 + 0.5
    v = py * 0.5 + 0.5
    iu = int(u * _GRID_U)
    if iu > _GRID_U - 1:
        iu = _GRID_U - 1
    iv = int(v * _GRID_V)
    if iv > _GRID_V - 1:
        iv = _GRID_V - 1
    return iu * _GRID_V + iv


@njit(cache=True)
def record_kernel(state, dirmask, origin, res, o, dirs, max_range, hits_out):
    """Insert each ray's direction into the direction set of the occupied
    voxel it terminates at. hits_out[r] = (ix, iy, iz) or (-1, -1, -1)."""
    n = dirs.shape[0]
    for r in range(n):
        cause, t_hit, ix, iy, iz = _terminal(
            o, dirs[r], max_range, state, origin, res, True)
        if cause == HIT_OCCUPIED:
            b = _quantize_dir(dirs[r, 0], dirs[r, 1], dirs[r, 2])
            dirmask[ix, iy, iz, b >> 6] |= _ONE << np.uint64(b & 63)
            hits_out[r, 0] = ix
            hits_out[r, 1] = iy
            hits_out[r, 2] = iz
        else:
            hits_out[r, 0] = -1
            hits_out[r, 1] = -1
            hits_out[r, 2] = -1


@njit(cache=True)
def cast_bool_kernel(occ, origin, res, o, dirs, max_range, depth_out,
                     cell_out):
    """First-hit ray cast against a boolean occupancy grid.

    depth_out[r] = entry t of the first occupied cell, or -1 for no hit;
    cell_out[r] = its index or (-1, -1, -1).
    """
    nx, ny, nz = occ.shape
    n = dirs.shape[0]
    for r in range(n):
        d = dirs[r]
        depth_out[r] = -1.0
        cell_out[r, 0] = -1
        cell_out[r, 1] = -1
        cell_out[r, 2] = -1
        t0, t_end, range_limited, status = _clip_interval(
            o, d, origin, res, nx, ny, nz, max_range)
        if status != 0:
            continue
        ix, iy, iz = _start_cell(o, d, t0, origin, res, nx, ny, nz)
        sx, tmx, tdx = _axis_setup(o[0], d[0], ix, origin[0], res)
        sy, tmy, tdy = _axis_setup(o[1], d[1], iy, origin[1], res)
        sz, tmz, tdz = _axis_setup(o[2], d[2], iz, origin[2], res)
        t_enter = t0
        while True:
            if occ[ix, iy, iz]:
                depth_out[r] = t_enter
                cell_out[r, 0] = ix
                cell_out[r, 1] = iy
                cell_out[r, 2] = iz
                break
            tm = tmx
            if tmy < tm:
                tm = tmy
            if tmz < tm:
                tm = tmz
            if tm >= t_end:
                break
            if tmx == tm:
                ix += sx
                tmx += tdx
            if tmy == tm:
                iy += sy
                tmy += tdy
            if tmz == tm:
                iz += sz
                tmz += tdz
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or iz < 0 or iz >= nz:
                break
            t_enter = tm


@njit(cache=True)
def segment_first_hit(occ, origin, res, p0, p1):
    """First occupied cell on the segment p0 -> p1 of a boolean grid.

    Returns (hit, t, ix, iy, iz) with t in [0, 1] along the segment.
    """
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    dz = p1[2] - p0[2]
    length = np.sqrt(dx * dx + dy * dy + dz * dz)
    if length < 1e-12:
        ix = int(np.floor((p0[0] - origin[0]) / res))
        iy = int(np.floor((p0[1] - origin[1]) / res))
        iz = int(np.floor((p0[2] - origin[2]) / res))
        nx, ny, nz = occ.shape
        if 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz and occ[ix, iy, iz]:
            return True, 0.0, ix, iy, iz
        return False, -1.0, -1, -1, -1
    d = np.empty(3)
    d[0] = dx / length
    d[1] = dy / length
    d[2] = dz / length
    depth = np.empty(1)
    cell = np.empty((1, 3), dtype=np.int64)
    cast_bool_kernel(occ, origin, res, p0, d.reshape(1, 3), length, depth,
                     cell)
    if depth[0] >= 0.0:
        return True, depth[0] / length, cell[0, 0], cell[0, 1], cell[0, 2]
    return False, -1.0, -1, -1, -1


def warmup():
    """Force-compile the kernels on a toy grid (cached across processes)."""
    state = np.zeros((2, 2, 2), dtype=np.uint8)
    state[1, 1, 1] = OCCUPIED
    occ = state == OCCUPIED
    origin = np.zeros(3)
    o = np.array([0.25, 0.25, 0.25])
    dirs = np.array([[1.0, 0.0, 0.0]])
    buf = np.empty((16, 3), dtype=np.int64)
    traverse_fill(o, dirs[0], 10.0, state, origin, 1.0, True, buf)
    sem = np.zeros((2, 2, 2))
    col = np.zeros((2, 2, 2, 3), dtype=np.float32)
    mask = np.zeros((2, 2, 2, 2), dtype=np.uint64)
    cb = np.zeros((96, 3))
    depth = np.empty(1)
    s_out = np.empty(1)
    g_out = np.empty(1)
    c_out = np.empty((1, 3))
    term = np.empty((1, 4), dtype=np.int64)
    render_kernel(state, sem, col, mask, cb, origin, 1.0, o, dirs, 10.0,
                  depth, s_out, g_out, c_out, term)
    carve_kernel(state.copy(), origin, 1.0, o, dirs, np.array([5.0]))
    hits = np.empty((1, 3), dtype=np.int64)
    record_kernel(state, mask, origin, 1.0, o, dirs, 10.0, hits)
    cell = np.empty((1, 3), dtype=np.int64)
    cast_bool_kernel(occ, origin, 1.0, o, dirs, 10.0, depth, cell)
    segment_first_hit(occ, origin, 1.0, o, np.array([1.9, 0.3, 0.3]))
