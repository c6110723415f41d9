"""Checkerboard overlays of the reference frame warped by tracking results.

Frames are binary PPM (P6) files so no image codec is needed.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .core import FouTriplet

DEFAULT_CELL = 8
DARKEN = 0.4


class ImageError(ValueError):
    pass


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ImageError(f"expected (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


_PPM_HEADER = re.compile(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = _PPM_HEADER.match(raw)
    if not m:
        raise ImageError(f"{path}: not a binary PPM file")
    w, h, maxval = (int(v) for v in m.groups())
    if maxval != 255:
        raise ImageError(f"{path}: only 8-bit PPM supported")
    body = raw[m.end():]
    if len(body) < w * h * 3:
        raise ImageError(f"{path}: truncated pixel data")
    return np.frombuffer(body, np.uint8, w * h * 3).reshape(h, w, 3).copy()


def frame_path(frames_dir, index: int) -> Path:
    return Path(frames_dir) / f"{index:05d}.ppm"


def checkerboard(width: int, height: int, cell: int = DEFAULT_CELL) -> np.ndarray:
    """Boolean mask, True on cells where the reference frame is drawn."""
    ys, xs = np.mgrid[0:height, 0:width]
    return ((xs // cell) + (ys // cell)) % 2 == 0


def overlay(
    reference: np.ndarray,
    current: np.ndarray,
    result: FouTriplet,
    threshold: float = 0.02,
    cell: int = DEFAULT_CELL,
) -> np.ndarray:
    """Splat checkerboard-masked reference pixels onto ``current``.

    Each unoccluded reference pixel moves to the nearest pixel of
    ``p + flow[p]``. Current-frame pixels that receive no unoccluded
    reference pixel are darkened.
    """
    h, w = result.shape
    if reference.shape[:2] != (h, w) or current.shape[:2] != (h, w):
        raise ImageError("frames and result must share the same size")
    ys, xs = np.mgrid[0:h, 0:w]
    flow = result.flow.data.astype(np.float64)
    tx = np.rint(xs + flow[..., 0]).astype(np.int64)
    ty = np.rint(ys + flow[..., 1]).astype(np.int64)
    ok = (result.occlusion.data <= threshold) & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)

    covered = np.zeros((h, w), bool)
    covered[ty[ok], tx[ok]] = True
    out = current.astype(np.float64)
    out[~covered] *= DARKEN

    draw = ok & checkerboard(w, h, cell)
    out[ty[draw], tx[draw]] = reference[ys[draw], xs[draw]]
    return np.clip(np.round(out), 0, 255).astype(np.uint8)
