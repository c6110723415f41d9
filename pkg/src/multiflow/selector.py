"""Per-pixel choice among chained candidates and composition of the result."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .chaining import BACKENDS, run_bands
from .core import FouTriplet, GridError

DEFAULT_OCCLUSION_THRESHOLD = 0.02


@dataclass(frozen=True, eq=False)
class DeltaIndexMap:
    """H x W grid of indices into the ordered candidate (delta) list."""

    data: np.ndarray
    count: int

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.int16, copy=True)
        if arr.ndim != 2:
            raise GridError(f"index map must be 2-d, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.count):
            raise GridError(f"index out of range for {self.count} candidates")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def _trusted(cls, arr: np.ndarray, count: int) -> DeltaIndexMap:
        obj = object.__new__(cls)
        arr.flags.writeable = False
        object.__setattr__(obj, "data", arr)
        object.__setattr__(obj, "count", count)
        return obj


def _check_candidates(candidates: Sequence[FouTriplet]) -> None:
    if not candidates:
        raise ValueError("at least one candidate is required")
    first = candidates[0]
    for c in candidates[1:]:
        if c.shape != first.shape:
            raise GridError(f"candidate grids differ: {first.shape} vs {c.shape}")


def select_best(
    candidates: Sequence[FouTriplet],
    threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    backend: str = "compiled",
    workers: int = 1,
) -> DeltaIndexMap:
    """Index of the lowest-uncertainty unoccluded candidate at every pixel.

    A candidate counts as occluded when its score exceeds ``threshold``.
    Ties go to the earliest candidate; pixels where every candidate is
    occluded get index 0.
    """
    _check_candidates(candidates)
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"occlusion threshold must be in (0, 1), got {threshold}")
    first_dst = candidates[0].dst_frame
    if any(c.dst_frame != first_dst for c in candidates):
        raise ValueError("candidates must share the destination frame")
    if len(candidates) == 1:
        return DeltaIndexMap(np.zeros(candidates[0].shape, np.int16), 1)
    if backend == "compiled":
        out = np.empty(candidates[0].shape, np.int16)
        occs = tuple(c.occlusion.data for c in candidates)
        uncs = tuple(c.uncertainty.data for c in candidates)
        run_bands(kernels.select_rows, out.shape[0], workers, occs, uncs, float(threshold), out)
        return DeltaIndexMap._trusted(out, len(candidates))

    # Occluded candidates are excluded by an infinite key; argmin returns the
    # first minimum, which also yields 0 when every key is infinite.
    keys = np.stack([c.uncertainty.data for c in candidates]).astype(np.float64)
    occluded = np.stack([c.occlusion.data for c in candidates]).astype(np.float64) > threshold
    keys[occluded] = np.inf
    return DeltaIndexMap(np.argmin(keys, axis=0), len(candidates))


def compose_result(
    candidates: Sequence[FouTriplet],
    index_map: DeltaIndexMap,
    backend: str = "compiled",
    workers: int = 1,
) -> FouTriplet:
    """Copy every pixel from the candidate named by ``index_map``."""
    _check_candidates(candidates)
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    if index_map.count != len(candidates) or index_map.shape != candidates[0].shape:
        raise GridError("index map does not match the candidate list")
    idx = index_map.data.astype(np.intp)
    if idx.size and idx.max() >= len(candidates):
        raise GridError("index out of range")
    first = candidates[0]
    if len(candidates) == 1:
        return first
    if backend == "compiled":
        h, w = first.shape
        flow = np.empty((h, w, 2), np.float32)
        occ = np.empty((h, w), np.float32)
        unc = np.empty((h, w), np.float32)
        run_bands(
            kernels.compose_rows, h, workers,
            tuple(c.flow.data for c in candidates),
            tuple(c.occlusion.data for c in candidates),
            tuple(c.uncertainty.data for c in candidates),
            index_map.data, flow, occ, unc,
        )
        return FouTriplet._trusted(flow, occ, unc, first.src_frame, first.dst_frame)

    def pick(arrays):
        stacked = np.stack(arrays)
        sel = idx.reshape((1,) + idx.shape + (1,) * (stacked.ndim - 3))
        return np.take_along_axis(stacked, sel, axis=0)[0]

    flow = pick([c.flow.data for c in candidates])
    occ = pick([c.occlusion.data for c in candidates])
    unc = pick([c.uncertainty.data for c in candidates])
    return FouTriplet._trusted(flow, occ, unc, first.src_frame, first.dst_frame)
