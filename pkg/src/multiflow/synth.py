"""Layered synthetic scenes with analytic affine motion.

A scene is a stack of layers (background first). Each layer has a support
region in reference-frame coordinates and one 2x3 affine matrix per frame
mapping reference coordinates to that frame; frame 0 is the identity. A
pixel belongs to the topmost layer whose region contains the pre-image of
its center. Because motion is affine, flow between any two frames is
known exactly, and so is occlusion.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FouTriplet, GridError
from .sampling import pixel_grid

SCENE_VERSION = 1


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Support region: ``plane`` (everything), ``rect`` (x0, y0, x1, y1) or ``disc`` (cx, cy, r)."""

    kind: str
    params: tuple = ()

    def __post_init__(self):
        expected = {"plane": 0, "rect": 4, "disc": 3}
        if self.kind not in expected:
            raise SceneError(f"unknown region kind {self.kind!r}")
        params = tuple(float(v) for v in self.params)
        if len(params) != expected[self.kind]:
            raise SceneError(f"{self.kind} region takes {expected[self.kind]} parameters, got {len(params)}")
        if self.kind == "rect" and (params[2] < params[0] or params[3] < params[1]):
            raise SceneError(f"degenerate rect {params}")
        if self.kind == "disc" and params[2] <= 0:
            raise SceneError("disc radius must be positive")
        object.__setattr__(self, "params", params)

    def contains(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, np.float64)
        ys = np.asarray(ys, np.float64)
        if self.kind == "plane":
            return np.ones(np.broadcast(xs, ys).shape, bool)
        if self.kind == "rect":
            x0, y0, x1, y1 = self.params
            return (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        cx, cy, r = self.params
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r

    def to_json(self) -> dict:
        if self.kind == "plane":
            return {"shape": "plane"}
        if self.kind == "rect":
            return {"shape": "rect", "rect": list(self.params)}
        return {"shape": "disc", "center": list(self.params[:2]), "radius": self.params[2]}


def invert_affine(m: np.ndarray) -> np.ndarray:
    """Inverse of a 2x3 affine matrix (exact for unimodular dyadic matrices)."""
    a, b, tx = m[0]
    c, d, ty = m[1]
    det = a * d - b * c
    if det == 0 or not math.isfinite(det):
        raise SceneError("affine transform is not invertible")
    ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
    return np.array([[ia, ib, -(ia * tx + ib * ty)], [ic, id_, -(ic * tx + id_ * ty)]])


def apply_affine(m: np.ndarray, xs, ys) -> tuple[np.ndarray, np.ndarray]:
    return m[0, 0] * xs + m[0, 1] * ys + m[0, 2], m[1, 0] * xs + m[1, 1] * ys + m[1, 2]


def rate_motion(
    num_frames: int,
    velocity=(0.0, 0.0),
    rotation: float = 0.0,
    scale: float = 0.0,
    shear=(0.0, 0.0),
    center=(0.0, 0.0),
) -> np.ndarray:
    """Per-frame matrices for motion at constant rates about ``center``.

    At frame t the linear part is R(rotation * t) @ diag(1 + scale * t) @
    shear(shear * t) and the layer is translated by ``velocity * t``.
    """
    mats = np.zeros((num_frames, 2, 3))
    cx, cy = center
    for t in range(num_frames):
        ang = rotation * t
        rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
        s = 1.0 + scale * t
        sh = np.array([[1.0, shear[0] * t], [shear[1] * t, 1.0]])
        lin = rot @ (s * sh)
        mats[t, :, :2] = lin
        mats[t, 0, 2] = cx - (lin[0, 0] * cx + lin[0, 1] * cy) + velocity[0] * t
        mats[t, 1, 2] = cy - (lin[1, 0] * cx + lin[1, 1] * cy) + velocity[1] * t
    return mats


@dataclass
class Layer:
    region: Region
    transforms: np.ndarray  # (num_frames, 2, 3)
    color: tuple = (128, 128, 128)
    motion: dict | None = None  # how transforms were specified, kept for serialization

    def __post_init__(self):
        self.transforms = np.asarray(self.transforms, np.float64)
        if self.transforms.ndim != 3 or self.transforms.shape[1:] != (2, 3):
            raise SceneError(f"layer transforms must have shape (N, 2, 3), got {self.transforms.shape}")
        if not np.all(np.isfinite(self.transforms)):
            raise SceneError("layer transforms must be finite")
        self.inverses = np.stack([invert_affine(m) for m in self.transforms])


IDENTITY = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass
class SceneModel:
    width: int
    height: int
    num_frames: int
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SceneError(f"invalid scene size {self.width}x{self.height}")
        if self.num_frames < 1:
            raise SceneError("scene needs at least one frame")
        if not self.layers:
            raise SceneError("scene needs at least one layer")
        for i, layer in enumerate(self.layers):
            if len(layer.transforms) != self.num_frames:
                raise SceneError(f"layer {i} has {len(layer.transforms)} transforms for {self.num_frames} frames")
            if not np.array_equal(layer.transforms[0], IDENTITY):
                raise SceneError(f"layer {i} transform at frame 0 must be the identity")

    def _check_frame(self, f: int) -> None:
        if not 0 <= f < self.num_frames:
            raise SceneError(f"frame {f} out of range [0, {self.num_frames})")

    def owner(self, frame: int, xs, ys) -> np.ndarray:
        """Index of the topmost layer covering each position in ``frame`` (-1 if none)."""
        self._check_frame(frame)
        xs = np.asarray(xs, np.float64)
        ys = np.asarray(ys, np.float64)
        out = np.full(np.broadcast(xs, ys).shape, -1, np.int32)
        for i, layer in enumerate(self.layers):
            rx, ry = apply_affine(layer.inverses[frame], xs, ys)
            out[layer.region.contains(rx, ry)] = i
        return out

    def layer_map(self, frame: int) -> np.ndarray:
        xs, ys = pixel_grid(self.width, self.height)
        return self.owner(frame, xs, ys)

    def covered_above(self, frame: int, layer_ids: np.ndarray, xs, ys) -> np.ndarray:
        """True where a layer above ``layer_ids`` covers the position in ``frame``."""
        top = self.owner(frame, xs, ys)
        return top > layer_ids

    def in_view(self, xs, ys) -> np.ndarray:
        return (xs >= 0) & (xs <= self.width - 1) & (ys >= 0) & (ys <= self.height - 1)


def gt_flow(scene: SceneModel, a: int, b: int) -> FouTriplet:
    """Exact flow and binary occlusion from frame ``a`` to frame ``b``."""
    scene._check_frame(a)
    scene._check_frame(b)
    w, h = scene.width, scene.height
    xs, ys = pixel_grid(w, h)
    owner = scene.owner(a, xs, ys)
    qx = xs.copy()
    qy = ys.copy()
    for i, layer in enumerate(scene.layers):
        sel = owner == i
        if not sel.any():
            continue
        m = layer.transforms[b] if a == 0 else _compose(layer.transforms[b], layer.inverses[a])
        qx[sel], qy[sel] = apply_affine(m, xs[sel], ys[sel])
    occ = ~scene.in_view(qx, qy) | scene.covered_above(b, owner, qx, qy) | (owner < 0)
    if a == b:
        occ[:] = False
    flow = np.stack([qx - xs, qy - ys], axis=-1)
    zeros = np.zeros((h, w), np.float32)
    return FouTriplet(flow.astype(np.float32), occ.astype(np.float32), zeros, a, b)


def _compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Matrix of ``outer(inner(p))``."""
    lin = outer[:, :2] @ inner[:, :2]
    trans = outer[:, :2] @ inner[:, 2] + outer[:, 2]
    return np.concatenate([lin, trans[:, None]], axis=1)


@dataclass
class PointTracks:
    """Ground-truth trajectories of physical points over every scene frame."""

    positions: np.ndarray  # (num_points, num_frames, 2)
    visible: np.ndarray  # (num_points, num_frames) bool
    layers: np.ndarray  # (num_points,)


def trajectories(scene: SceneModel, points, frame: int = 0) -> PointTracks:
    """Follow the surface points seen at ``points`` in ``frame`` through the scene."""
    pts = np.asarray(points, np.float64).reshape(-1, 2)
    owner = scene.owner(frame, pts[:, 0], pts[:, 1])
    n, nf = len(pts), scene.num_frames
    pos = np.zeros((n, nf, 2))
    vis = np.zeros((n, nf), bool)
    for i, layer in enumerate(scene.layers):
        sel = owner == i
        if not sel.any():
            continue
        rx, ry = apply_affine(layer.inverses[frame], pts[sel, 0], pts[sel, 1])
        for t in range(nf):
            x, y = apply_affine(layer.transforms[t], rx, ry)
            pos[sel, t, 0] = x
            pos[sel, t, 1] = y
    for t in range(nf):
        x, y = pos[:, t, 0], pos[:, t, 1]
        vis[:, t] = scene.in_view(x, y) & ~scene.covered_above(t, owner, x, y) & (owner >= 0)
    return PointTracks(pos, vis, owner)


# -- noise -------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Per-pair flow corruption.

    Flow noise std grows with the frame gap: ``sigma(gap) = sigma_scale *
    gap ** sigma_exponent`` pixels. With probability ``gross_prob`` a pixel
    gets a gross error of length ``gross_magnitude`` in a random direction
    instead. Occlusion scores are flipped with probability ``flip_prob``.
    The emitted variance is the per-component variance of that mixture,
    identical for every pixel of a pair.
    """

    sigma_scale: float = 0.0
    sigma_exponent: float = 0.5
    gross_prob: float = 0.0
    gross_magnitude: float = 0.0
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_scale < 0 or self.sigma_exponent < 0:
            raise ValueError("sigma must be non-negative and nondecreasing in the gap")
        for name in ("gross_prob", "flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.gross_magnitude < 0:
            raise ValueError("gross_magnitude must be non-negative")

    def sigma(self, gap: int) -> float:
        gap = abs(gap)
        if gap == 0:
            return 0.0
        return self.sigma_scale * gap**self.sigma_exponent

    def variance(self, gap: int) -> float:
        s = self.sigma(gap)
        eps = self.gross_prob
        return (1.0 - eps) * s * s + eps * self.gross_magnitude**2 / 2.0

    @classmethod
    def from_json(cls, data: dict) -> NoiseModel:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown noise parameters: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def _pair_rng(seed: int, src: int, dst: int) -> np.random.Generator:
    # Counter-based generator keyed on (seed, pair): any pair can be
    # regenerated independently and in any order.
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, src, dst])))


def corrupt(fou: FouTriplet, noise: NoiseModel) -> FouTriplet:
    gap = abs(fou.dst_frame - fou.src_frame)
    sigma = noise.sigma(gap)
    if gap == 0 or (sigma == 0 and noise.gross_prob == 0 and noise.flip_prob == 0):
        return fou
    rng = _pair_rng(noise.seed, fou.src_frame, fou.dst_frame)
    shape = fou.shape
    flow = fou.flow.data.astype(np.float64)
    err = rng.normal(0.0, 1.0, shape + (2,)) * sigma
    gross = rng.random(shape) < noise.gross_prob
    theta = rng.uniform(0.0, 2.0 * math.pi, shape)
    err[gross, 0] = noise.gross_magnitude * np.cos(theta[gross])
    err[gross, 1] = noise.gross_magnitude * np.sin(theta[gross])
    flip = rng.random(shape) < noise.flip_prob
    occ = fou.occlusion.data.copy()
    occ[flip] = 1.0 - occ[flip]
    unc = fou.uncertainty.data.astype(np.float64) + noise.variance(gap)
    return FouTriplet(
        (flow + err).astype(np.float32), occ, unc.astype(np.float32), fou.src_frame, fou.dst_frame
    )


def huber(r, delta: float):
    r = np.abs(np.asarray(r, np.float64))
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def uncertainty_loss(pred_flow, gt_flow_vec, sigma2, huber_delta: float = 1.0):
    """Heteroscedastic regression loss on the flow end-point error.

    ``huber(|pred - gt|) / (2 sigma2) + log(sigma2) / 2``; vectorizes over
    leading axes of ``pred_flow``/``gt_flow_vec`` (last axis is (dx, dy)).
    """
    sigma2 = np.asarray(sigma2, np.float64)
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    diff = np.asarray(pred_flow, np.float64) - np.asarray(gt_flow_vec, np.float64)
    r = np.sqrt(np.sum(diff * diff, axis=-1))
    loss = huber(r, huber_delta) / (2.0 * sigma2) + 0.5 * np.log(sigma2)
    return float(loss) if np.ndim(loss) == 0 else loss


# -- providers ---------------------------------------------------------------


class SyntheticProvider:
    """Serves exact (optionally corrupted) triplets for any frame pair of a scene."""

    def __init__(self, scene: SceneModel, noise: NoiseModel | None = None, cache: bool = True):
        self.scene = scene
        self.noise = noise
        self.width = scene.width
        self.height = scene.height
        self.num_frames = scene.num_frames
        self._cache: dict[tuple[int, int], FouTriplet] | None = {} if cache else None
        self.calls = 0

    def get(self, src: int, dst: int) -> FouTriplet:
        key = (src, dst)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        self.calls += 1
        if src == dst:
            from .core import identity_triplet

            fou = identity_triplet(self.width, self.height, src)
        else:
            fou = gt_flow(self.scene, src, dst)
            if self.noise is not None:
                fou = corrupt(fou, self.noise)
        if self._cache is not None:
            self._cache[key] = fou
        return fou


# -- rendering ---------------------------------------------------------------


def render_frame(scene: SceneModel, frame: int) -> np.ndarray:
    """RGB uint8 image of ``frame``; each layer carries a texture fixed to its surface."""
    xs, ys = pixel_grid(scene.width, scene.height)
    owner = scene.owner(frame, xs, ys)
    img = np.zeros((scene.height, scene.width, 3), np.float64)
    for i, layer in enumerate(scene.layers):
        sel = owner == i
        if not sel.any():
            continue
        rx, ry = apply_affine(layer.inverses[frame], xs[sel], ys[sel])
        shade = 0.7 + 0.3 * np.sin(0.9 * rx + 0.3 * i) * np.cos(0.7 * ry - 0.2 * i)
        img[sel] = shade[:, None] * np.asarray(layer.color, np.float64)[None, :]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


# -- scene files ---------------------------------------------------------------


def _layer_from_json(d: dict, num_frames: int) -> Layer:
    shape = d.get("shape")
    if shape == "plane":
        region = Region("plane")
    elif shape == "rect":
        region = Region("rect", tuple(d["rect"]))
    elif shape == "disc":
        region = Region("disc", tuple(d["center"]) + (d["radius"],))
    else:
        raise SceneError(f"unknown layer shape {shape!r}")
    motion = dict(d.get("motion", {"type": "rate"}))
    kind = motion.pop("type", "rate")
    if kind == "rate":
        mats = rate_motion(num_frames, **motion)
    elif kind == "explicit":
        mats = np.asarray(motion["matrices"], np.float64)
    else:
        raise SceneError(f"unknown motion type {kind!r}")
    color = tuple(d.get("color", (128, 128, 128)))
    return Layer(region, mats, color, dict(d.get("motion", {"type": "rate"})))


def scene_from_json(data: dict) -> SceneModel:
    if data.get("version") != SCENE_VERSION:
        raise SceneError(f"unsupported scene version {data.get('version')!r}")
    try:
        n = int(data["num_frames"])
        layers = [_layer_from_json(d, n) for d in data.get("layers", [])]
        return SceneModel(int(data["width"]), int(data["height"]), n, layers)
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene: {exc}") from exc


def scene_to_json(scene: SceneModel) -> dict:
    layers = []
    for layer in scene.layers:
        d = layer.region.to_json()
        d["motion"] = layer.motion or {"type": "explicit", "matrices": layer.transforms.tolist()}
        d["color"] = list(layer.color)
        layers.append(d)
    return {
        "version": SCENE_VERSION,
        "width": scene.width,
        "height": scene.height,
        "num_frames": scene.num_frames,
        "layers": layers,
    }


def load_scene(path) -> SceneModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: {exc}") from exc
    return scene_from_json(data)


def save_scene(scene: SceneModel, path) -> None:
    Path(path).write_text(json.dumps(scene_to_json(scene), indent=2))


# -- scene builders ------------------------------------------------------------


def make_layer(region: Region, num_frames: int, color=(128, 128, 128), **motion) -> Layer:
    return Layer(region, rate_motion(num_frames, **motion), tuple(color), {"type": "rate", **motion})


def occluder_layer(rect, frames, num_frames: int, color=(20, 20, 20)) -> Layer:
    """A rectangle shown at ``rect`` (frame coordinates) only during ``frames = (a, b)``.

    The support region lives far outside the image in reference
    coordinates and is translated into view during the scripted interval.
    """
    a, b = frames
    if a < 1:
        raise SceneError("scripted occluders must appear after frame 0")
    x0, y0, x1, y1 = rect
    park = 1024.0 + 4.0 * max(abs(x1), abs(y1))
    region = Region("rect", (x0 - park, y0, x1 - park, y1))
    mats = np.repeat(IDENTITY[None], num_frames, axis=0)
    mats[a : b + 1, 0, 2] = park
    return Layer(region, mats, tuple(color), {"type": "explicit", "matrices": mats.tolist()})


def _dyadic(rng: np.random.Generator, limit: float, denom: int) -> float:
    k = int(round(limit * denom))
    return float(rng.integers(-k, k + 1)) / denom


def random_scene(
    rng: np.random.Generator,
    width: int = 64,
    height: int = 64,
    num_frames: int = 30,
    num_sprites: int = 2,
    motion: str = "dyadic",
) -> SceneModel:
    """Background plane plus rect/disc sprites with random motion.

    ``motion="dyadic"``: translations and single-axis shears with dyadic
    rates, so every flow is exactly representable in float32.
    ``motion="smooth"``: adds rotation and scaling.
    """
    layers = []
    for i in range(num_sprites + 1):
        if i == 0:
            region = Region("plane")
            limit = 0.5
        else:
            size = float(rng.integers(8, max(9, min(width, height) // 3)))
            cx = float(rng.integers(size // 2, width - size // 2))
            cy = float(rng.integers(size // 2, height - size // 2))
            if rng.random() < 0.5:
                region = Region("rect", (cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2))
            else:
                region = Region("disc", (cx, cy, size / 2))
            limit = 1.0
        center = (float(width // 2), float(height // 2)) if i == 0 else (cx, cy)
        kw = dict(velocity=(_dyadic(rng, limit, 8), _dyadic(rng, limit, 8)), center=center)
        axis = int(rng.integers(0, 2))
        sh = [0.0, 0.0]
        sh[axis] = _dyadic(rng, 1 / 128, 1024)
        kw["shear"] = tuple(sh)
        if motion == "smooth":
            kw["rotation"] = float(rng.uniform(-0.01, 0.01))
            kw["scale"] = float(rng.uniform(-0.004, 0.004))
        elif motion != "dyadic":
            raise ValueError(f"unknown motion kind {motion!r}")
        color = tuple(int(c) for c in rng.integers(40, 256, 3))
        layers.append(make_layer(region, num_frames, color, **kw))
    return SceneModel(width, height, num_frames, layers)


__all__ = [
    "GridError",
    "Layer",
    "NoiseModel",
    "PointTracks",
    "Region",
    "SceneError",
    "SceneModel",
    "SyntheticProvider",
    "corrupt",
    "gt_flow",
    "huber",
    "load_scene",
    "make_layer",
    "occluder_layer",
    "random_scene",
    "rate_motion",
    "render_frame",
    "save_scene",
    "scene_from_json",
    "scene_to_json",
    "trajectories",
    "uncertainty_loss",
]
