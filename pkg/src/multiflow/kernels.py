"""Compiled per-pixel loops for chaining and selection.

The arithmetic mirrors the NumPy code in :mod:`sampling`,
:mod:`chaining` and :mod:`selector` operation for operation (float64
blending, same lerp order, float32 stores), so both paths give
bit-identical grids. Kernels release the GIL; callers may run row bands
on several threads.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _axis(c, size):
    if c < 0.0:
        c = 0.0
    elif c > size - 1:
        c = float(size - 1)
    if size == 1:
        return 0, 0, 0.0
    i0 = int(math.floor(c))
    if i0 > size - 2:
        i0 = size - 2
    return i0, i0 + 1, c - i0


@numba.njit(cache=True, nogil=True)
def chain_rows(prev_flow, prev_occ, prev_unc, step_flow, step_occ, step_unc, out_flow, out_occ, out_unc, r0, r1):
    h, w = step_occ.shape
    for y in range(r0, r1):
        for x in range(w):
            pdx = np.float64(prev_flow[y, x, 0])
            pdy = np.float64(prev_flow[y, x, 1])
            qx = x + pdx
            qy = y + pdy
            x0, x1, fx = _axis(qx, w)
            y0, y1, fy = _axis(qy, h)
            gx = 1.0 - fx
            gy = 1.0 - fy

            top = np.float64(step_flow[y0, x0, 0]) * gx + np.float64(step_flow[y0, x1, 0]) * fx
            bot = np.float64(step_flow[y1, x0, 0]) * gx + np.float64(step_flow[y1, x1, 0]) * fx
            out_flow[y, x, 0] = np.float32(pdx + (top * gy + bot * fy))
            top = np.float64(step_flow[y0, x0, 1]) * gx + np.float64(step_flow[y0, x1, 1]) * fx
            bot = np.float64(step_flow[y1, x0, 1]) * gx + np.float64(step_flow[y1, x1, 1]) * fx
            out_flow[y, x, 1] = np.float32(pdy + (top * gy + bot * fy))

            top = np.float64(step_occ[y0, x0]) * gx + np.float64(step_occ[y0, x1]) * fx
            bot = np.float64(step_occ[y1, x0]) * gx + np.float64(step_occ[y1, x1]) * fx
            o = top * gy + bot * fy
            po = np.float64(prev_occ[y, x])
            if po > o:
                o = po
            if qx < 0.0 or qx > w - 1 or qy < 0.0 or qy > h - 1:
                o = 1.0
            out_occ[y, x] = np.float32(o)

            top = np.float64(step_unc[y0, x0]) * gx + np.float64(step_unc[y0, x1]) * fx
            bot = np.float64(step_unc[y1, x0]) * gx + np.float64(step_unc[y1, x1]) * fx
            out_unc[y, x] = np.float32(np.float64(prev_unc[y, x]) + (top * gy + bot * fy))


@numba.njit(cache=True, nogil=True)
def select_rows(occs, uncs, threshold, out_index, r0, r1):
    """Per pixel: earliest candidate of lowest uncertainty among those with occ <= threshold."""
    k = len(occs)
    w = out_index.shape[1]
    for y in range(r0, r1):
        for x in range(w):
            best = 0
            best_u = np.inf
            found = False
            for i in range(k):
                if np.float64(occs[i][y, x]) > threshold:
                    continue
                u = np.float64(uncs[i][y, x])
                if not found or u < best_u:
                    best = i
                    best_u = u
                    found = True
            out_index[y, x] = best


@numba.njit(cache=True, nogil=True)
def compose_rows(flows, occs, uncs, index, out_flow, out_occ, out_unc, r0, r1):
    w = index.shape[1]
    for y in range(r0, r1):
        for x in range(w):
            i = index[y, x]
            out_flow[y, x, 0] = flows[i][y, x, 0]
            out_flow[y, x, 1] = flows[i][y, x, 1]
            out_occ[y, x] = occs[i][y, x]
            out_unc[y, x] = uncs[i][y, x]
