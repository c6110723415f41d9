"""Bilinear sampling of grids at real-valued positions.

Positions outside ``[0, W-1] x [0, H-1]`` are clamped to the border
before blending, so a sample never leaves the convex hull of the grid
values. Blending is done in float64 as two horizontal lerps followed by a
vertical one; at integer coordinates the stored value comes back exactly.
"""

from __future__ import annotations

import math

import numpy as np

from .core import FlowField, PositionMap, ScalarMap


def _taps(coord: np.ndarray, size: int):
    c = np.clip(coord, 0.0, size - 1)
    if size == 1:
        i0 = np.zeros(c.shape, np.intp)
        return i0, i0, np.zeros(c.shape, np.float64)
    i0 = np.minimum(np.floor(c), size - 2).astype(np.intp)
    return i0, i0 + 1, c - i0


def bilinear(grid: np.ndarray, xs, ys) -> np.ndarray:
    """Sample ``grid`` (H, W) or (H, W, C) at positions ``(xs, ys)``.

    ``xs`` and ``ys`` are broadcast together; the result has their shape
    (plus the channel axis for 3-d grids) and dtype float64.
    """
    xs, ys = np.broadcast_arrays(np.asarray(xs, np.float64), np.asarray(ys, np.float64))
    h, w = grid.shape[:2]
    x0, x1, fx = _taps(xs, w)
    y0, y1, fy = _taps(ys, h)
    if grid.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = grid[y0, x0].astype(np.float64)
    v10 = grid[y0, x1].astype(np.float64)
    v01 = grid[y1, x0].astype(np.float64)
    v11 = grid[y1, x1].astype(np.float64)
    gx = 1.0 - fx
    top = v00 * gx + v10 * fx
    bottom = v01 * gx + v11 * fx
    return top * (1.0 - fy) + bottom * fy


def _check_pos(pos) -> tuple[float, float]:
    x, y = (float(v) for v in pos)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"sample position must be finite, got ({x}, {y})")
    return x, y


def sample_scalar(smap: ScalarMap, pos) -> float:
    x, y = _check_pos(pos)
    return float(bilinear(smap.data, x, y))


def sample_flow(field: FlowField, pos) -> tuple[float, float]:
    x, y = _check_pos(pos)
    dx, dy = bilinear(field.data, x, y)
    return float(dx), float(dy)


def pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel-center coordinates as float64 ``(xs, ys)`` of shape (H, W)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def positions_from_flow(flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel target positions ``p + flow[p]`` as float64 arrays."""
    h, w = flow.shape[:2]
    xs, ys = pixel_grid(w, h)
    return xs + flow[..., 0], ys + flow[..., 1]


def build_position_map(flow_0_to_a: FlowField) -> PositionMap:
    """Where every reference pixel sits in frame ``a``."""
    qx, qy = positions_from_flow(flow_0_to_a.data)
    return PositionMap(np.stack([qx, qy], axis=-1))


def out_of_bounds(pos, width: int, height: int) -> bool:
    x, y = pos
    return not (0.0 <= x <= width - 1 and 0.0 <= y <= height - 1)


def out_of_bounds_mask(xs: np.ndarray, ys: np.ndarray, width: int, height: int) -> np.ndarray:
    return (xs < 0.0) | (xs > width - 1) | (ys < 0.0) | (ys > height - 1)
