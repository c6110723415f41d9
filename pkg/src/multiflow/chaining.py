"""Composition of a memorized 0->s result with a fresh s->t triplet."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kernels
from .core import FouTriplet, GridError
from .sampling import bilinear, out_of_bounds_mask, positions_from_flow

BACKENDS = ("compiled", "numpy")


def stack_channels(fou: FouTriplet) -> np.ndarray:
    """(H, W, 4) float32 array ``[dx, dy, occlusion, uncertainty]``."""
    out = np.empty(fou.shape + (4,), np.float32)
    out[..., :2] = fou.flow.data
    out[..., 2] = fou.occlusion.data
    out[..., 3] = fou.uncertainty.data
    return out


def chain(prev: FouTriplet, step: FouTriplet, workers: int = 1, backend: str = "compiled") -> FouTriplet:
    """Chain ``prev`` (0 -> s) with ``step`` (s -> t) into a 0 -> t candidate.

    Each reference pixel p is carried to q = p + prev.flow[p]; the step
    triplet is sampled bilinearly at q. Flows add, occlusion scores take
    the maximum, variances add. If q falls outside the frame the candidate
    is marked fully occluded.

    With ``workers > 1`` the grid is split into row bands processed on a
    thread pool. Pixels are independent, so the output does not depend on
    the worker count. ``backend="numpy"`` uses plain array code; it gives
    the same bits as the compiled loops and serves as their cross-check.
    """
    if prev.dst_frame != step.src_frame:
        raise ValueError(
            f"cannot chain {prev.src_frame}->{prev.dst_frame} with {step.src_frame}->{step.dst_frame}"
        )
    if prev.shape != step.shape:
        raise GridError(f"grid size mismatch: {prev.shape} vs {step.shape}")
    if backend == "compiled":
        return _chain_compiled(prev, step, workers)
    if backend != "numpy":
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    args = (prev.flow.data, prev.occlusion.data, prev.uncertainty.data, stack_channels(step))
    if workers > 1 and prev.height > 1:
        bands = row_bands(prev.height, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda rows: _chain_arrays(*args, rows), bands))
        flow, occ, unc = (np.concatenate(p, axis=0) for p in zip(*parts))
    else:
        flow, occ, unc = _chain_arrays(*args)
    return FouTriplet._trusted(flow, occ, unc, prev.src_frame, step.dst_frame)


def row_bands(height: int, parts: int) -> list[slice]:
    edges = np.linspace(0, height, min(parts, height) + 1).round().astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def run_bands(kernel, height: int, workers: int, *args) -> None:
    """Call ``kernel(*args, r0, r1)`` over row bands, threaded if ``workers > 1``."""
    if workers <= 1 or height == 1:
        kernel(*args, 0, height)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(kernel, *args, b.start, b.stop) for b in row_bands(height, workers)]
        for f in futures:
            f.result()


def _chain_compiled(prev: FouTriplet, step: FouTriplet, workers: int) -> FouTriplet:
    h, w = prev.shape
    flow = np.empty((h, w, 2), np.float32)
    occ = np.empty((h, w), np.float32)
    unc = np.empty((h, w), np.float32)
    run_bands(
        kernels.chain_rows, h, workers,
        prev.flow.data, prev.occlusion.data, prev.uncertainty.data,
        step.flow.data, step.occlusion.data, step.uncertainty.data,
        flow, occ, unc,
    )
    return FouTriplet._trusted(flow, occ, unc, prev.src_frame, step.dst_frame)


def _chain_arrays(prev_flow, prev_occ, prev_unc, step_stack, rows=None):
    h, w = step_stack.shape[:2]
    if rows is not None:
        prev_flow, prev_occ, prev_unc = prev_flow[rows], prev_occ[rows], prev_unc[rows]
        ys, xs = np.mgrid[rows, 0:w]
        qx = xs + prev_flow[..., 0].astype(np.float64)
        qy = ys + prev_flow[..., 1].astype(np.float64)
    else:
        qx, qy = positions_from_flow(prev_flow)
    s = bilinear(step_stack, qx, qy)

    flow = (prev_flow.astype(np.float64) + s[..., :2]).astype(np.float32)
    occ = np.maximum(prev_occ.astype(np.float64), s[..., 2])
    occ[out_of_bounds_mask(qx, qy, w, h)] = 1.0
    unc = prev_unc.astype(np.float64) + s[..., 3]
    return flow, occ.astype(np.float32), unc.astype(np.float32)
