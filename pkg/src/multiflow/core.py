"""Shared value types for dense long-term tracking.

Coordinate convention: x grows to the right, y grows downward and pixel
centers sit on integer coordinates. Grids are numpy arrays indexed
``[y, x]``. A flow vector ``(dx, dy)`` stored at ``(x, y)`` of the source
frame says the point is found at ``(x + dx, y + dy)`` in the destination
frame.

All types are immutable after construction: the wrapped arrays are
float32 copies with the writeable flag cleared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised when a grid has the wrong shape, size or contents."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _as_grid(data, ndim: int, channels: int | None, what: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float32, copy=True, order="C")
    if arr.ndim != ndim:
        raise GridError(f"{what}: expected {ndim}-d array, got shape {arr.shape}")
    if channels is not None and arr.shape[-1] != channels:
        raise GridError(f"{what}: expected {channels} channels, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise GridError(f"{what}: empty grid {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{what}: non-finite values")
    return _frozen(arr)


def _check_dims(width: int, height: int) -> None:
    if int(width) != width or int(height) != height:
        raise GridError(f"grid dimensions must be integers, got {width}x{height}")
    if width < 1 or height < 1:
        raise GridError(f"grid dimensions must be positive, got {width}x{height}")


class _Grid:
    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    @classmethod
    def _trusted(cls, arr: np.ndarray):
        # Internal fast path: caller guarantees dtype, shape and finiteness.
        obj = object.__new__(cls)
        object.__setattr__(obj, "data", _frozen(np.ascontiguousarray(arr, dtype=np.float32)))
        return obj


@dataclass(frozen=True, eq=False)
class FlowField(_Grid):
    """H x W grid of (dx, dy) displacements in pixels."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_grid(self.data, 3, 2, "FlowField"))

    @classmethod
    def zeros(cls, width: int, height: int) -> FlowField:
        _check_dims(width, height)
        return cls._trusted(np.zeros((height, width, 2), np.float32))

    @classmethod
    def uniform(cls, width: int, height: int, dx: float, dy: float) -> FlowField:
        _check_dims(width, height)
        arr = np.empty((height, width, 2), np.float32)
        arr[..., 0] = dx
        arr[..., 1] = dy
        return cls(arr)


@dataclass(frozen=True, eq=False)
class ScalarMap(_Grid):
    """H x W grid of scalars (occlusion scores or uncertainty variances)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_grid(self.data, 2, None, "ScalarMap"))

    @classmethod
    def zeros(cls, width: int, height: int) -> ScalarMap:
        _check_dims(width, height)
        return cls._trusted(np.zeros((height, width), np.float32))

    @classmethod
    def full(cls, width: int, height: int, value: float) -> ScalarMap:
        _check_dims(width, height)
        return cls(np.full((height, width), value, np.float32))

    def is_occlusion(self) -> bool:
        return bool(np.all((self.data >= 0.0) & (self.data <= 1.0)))

    def is_uncertainty(self) -> bool:
        return bool(np.all(self.data >= 0.0))


@dataclass(frozen=True, eq=False)
class PositionMap(_Grid):
    """H x W grid of absolute (x, y) positions."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_grid(self.data, 3, 2, "PositionMap"))


@dataclass(frozen=True, eq=False)
class FouTriplet:
    """Flow, occlusion and uncertainty for one frame pair or one chain."""

    flow: FlowField
    occlusion: ScalarMap
    uncertainty: ScalarMap
    src_frame: int
    dst_frame: int

    def __post_init__(self):
        # plain arrays are accepted and wrapped
        for name, kind in (("flow", FlowField), ("occlusion", ScalarMap), ("uncertainty", ScalarMap)):
            value = getattr(self, name)
            if not isinstance(value, kind):
                object.__setattr__(self, name, kind(value))
        if not (self.flow.shape == self.occlusion.shape == self.uncertainty.shape):
            raise GridError(
                "triplet grids differ in size: "
                f"flow {self.flow.shape}, occlusion {self.occlusion.shape}, "
                f"uncertainty {self.uncertainty.shape}"
            )
        for name in ("src_frame", "dst_frame"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise GridError(f"{name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.occlusion.is_occlusion():
            raise GridError("occlusion scores must lie in [0, 1]")
        if not self.uncertainty.is_uncertainty():
            raise GridError("uncertainty must be non-negative")

    @classmethod
    def _trusted(cls, flow, occlusion, uncertainty, src_frame: int, dst_frame: int) -> FouTriplet:
        obj = object.__new__(cls)
        object.__setattr__(obj, "flow", FlowField._trusted(flow))
        object.__setattr__(obj, "occlusion", ScalarMap._trusted(occlusion))
        object.__setattr__(obj, "uncertainty", ScalarMap._trusted(uncertainty))
        object.__setattr__(obj, "src_frame", int(src_frame))
        object.__setattr__(obj, "dst_frame", int(dst_frame))
        return obj

    @property
    def width(self) -> int:
        return self.flow.width

    @property
    def height(self) -> int:
        return self.flow.height

    @property
    def shape(self) -> tuple[int, int]:
        return self.flow.shape

    def with_frames(self, src_frame: int, dst_frame: int) -> FouTriplet:
        return FouTriplet._trusted(
            self.flow.data, self.occlusion.data, self.uncertainty.data, src_frame, dst_frame
        )

    def equals(self, other: FouTriplet) -> bool:
        """Bit-exact comparison including frame stamps."""
        return (
            self.src_frame == other.src_frame
            and self.dst_frame == other.dst_frame
            and np.array_equal(self.flow.data, other.flow.data)
            and np.array_equal(self.occlusion.data, other.occlusion.data)
            and np.array_equal(self.uncertainty.data, other.uncertainty.data)
        )


def identity_triplet(width: int, height: int, frame: int) -> FouTriplet:
    """Zero flow, zero occlusion and zero uncertainty from ``frame`` to itself."""
    _check_dims(width, height)
    zeros = np.zeros((height, width), np.float32)
    return FouTriplet._trusted(
        np.zeros((height, width, 2), np.float32), zeros, zeros, frame, frame
    )


def as_queries(points, width: int, height: int) -> np.ndarray:
    """Validate query points and return them as an (n, 2) float64 array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros((0, 2), np.float64)
    pts = pts.reshape(-1, 2)
    if not np.all(np.isfinite(pts)):
        raise GridError("query points must be finite")
    outside = (pts[:, 0] < 0) | (pts[:, 0] > width - 1) | (pts[:, 1] < 0) | (pts[:, 1] > height - 1)
    if np.any(outside):
        bad = pts[np.argmax(outside)]
        raise GridError(
            f"query ({bad[0]}, {bad[1]}) outside reference frame [0, {width - 1}] x [0, {height - 1}]"
        )
    return pts


@dataclass
class Tracklet:
    """Trajectory of one query point over the tracked frames."""

    query: tuple[float, float]
    frames: list[int]
    positions: np.ndarray  # (n, 2)
    occlusion_score: np.ndarray  # (n,)
    occluded: np.ndarray = field(default=None)  # (n,) bool
    threshold: float = 0.02

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        self.occlusion_score = np.asarray(self.occlusion_score, dtype=np.float64).reshape(-1)
        if self.occluded is None:
            self.occluded = self.occlusion_score > self.threshold
        self.occluded = np.asarray(self.occluded, dtype=bool).reshape(-1)
        n = len(self.frames)
        if not (len(self.positions) == len(self.occlusion_score) == len(self.occluded) == n):
            raise GridError("tracklet entries must match the number of frames")

    def __len__(self) -> int:
        return len(self.frames)
