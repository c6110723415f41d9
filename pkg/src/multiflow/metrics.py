"""Point-tracking benchmark metrics and the query protocols.

Thresholds are strict (``error < delta``). Counts are pooled over every
(track, frame) pair that gets evaluated, then turned into ratios.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import Tracklet

THRESHOLDS = (1, 2, 4, 8, 16)
STRIDE = 5
TRACKS_VERSION = 1


@dataclass
class GroundTruthTrack:
    """Annotated trajectory of one point over every frame of a video."""

    positions: np.ndarray  # (num_frames, 2)
    visible: np.ndarray  # (num_frames,) bool
    point_id: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, np.float64).reshape(-1, 2)
        self.visible = np.asarray(self.visible, bool).reshape(-1)
        if len(self.positions) != len(self.visible):
            raise ValueError("positions and visibility must cover the same frames")
        if not np.all(np.isfinite(self.positions[self.visible])):
            raise ValueError(f"track {self.point_id}: non-finite position on a visible frame")

    @property
    def num_frames(self) -> int:
        return len(self.visible)


def _errors(pred_positions, gt_positions) -> np.ndarray:
    d = np.asarray(pred_positions, np.float64).reshape(-1, 2) - np.asarray(gt_positions, np.float64).reshape(-1, 2)
    return np.sqrt(np.sum(d * d, axis=-1))


def occlusion_accuracy(pred_occluded, gt_visible) -> float:
    pred = np.asarray(pred_occluded, bool).reshape(-1)
    vis = np.asarray(gt_visible, bool).reshape(-1)
    if pred.shape != vis.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {vis.size} labels")
    if pred.size == 0:
        raise ValueError("no frames to evaluate")
    return float(np.mean(pred == ~vis))


def within_fractions(pred_positions, gt_positions, gt_visible, thresholds=THRESHOLDS) -> dict | None:
    err = _errors(pred_positions, gt_positions)
    vis = np.asarray(gt_visible, bool).reshape(-1)
    if err.shape != vis.shape:
        raise ValueError("length mismatch between predictions and ground truth")
    if not vis.any():
        return None
    return {d: float(np.mean(err[vis] < d)) for d in thresholds}


def position_accuracy(pred_positions, gt_positions, gt_visible, thresholds=THRESHOLDS) -> float | None:
    """Fraction of visible points within each threshold, averaged; None without visible frames."""
    fr = within_fractions(pred_positions, gt_positions, gt_visible, thresholds)
    return None if fr is None else float(np.mean(list(fr.values())))


def jaccard_counts(pred_positions, pred_occluded, gt_positions, gt_visible, delta: float):
    err = _errors(pred_positions, gt_positions)
    vis = np.asarray(gt_visible, bool).reshape(-1)
    pvis = ~np.asarray(pred_occluded, bool).reshape(-1)
    if not (err.shape == vis.shape == pvis.shape):
        raise ValueError("length mismatch between predictions and ground truth")
    close = err < delta
    tp = int(np.sum(vis & pvis & close))
    fp = int(np.sum(pvis & (~vis | ~close)))
    fn = int(np.sum(vis & (~pvis | ~close)))
    return tp, fp, fn


def average_jaccard(pred_positions, pred_occluded, gt_positions, gt_visible, thresholds=THRESHOLDS) -> float | None:
    scores = []
    for d in thresholds:
        tp, fp, fn = jaccard_counts(pred_positions, pred_occluded, gt_positions, gt_visible, d)
        if tp + fp + fn == 0:
            return None
        scores.append(tp / (tp + fp + fn))
    return float(np.mean(scores))


def pck_t(pred_positions, gt_positions, mask_area: float) -> float:
    """Fraction of points closer than ``0.2 * sqrt(mask_area)``."""
    if not mask_area > 0:
        raise ValueError(f"mask area must be positive, got {mask_area}")
    err = _errors(pred_positions, gt_positions)
    if err.size == 0:
        raise ValueError("no points to evaluate")
    return float(np.mean(err < 0.2 * np.sqrt(mask_area)))


@dataclass
class EvalReport:
    """Pooled counts; the headline numbers are derived from them."""

    thresholds: tuple = THRESHOLDS
    frames: int = 0
    occlusion_correct: int = 0
    visible: int = 0
    within: dict = field(default_factory=dict)
    tp: dict = field(default_factory=dict)
    fp: dict = field(default_factory=dict)
    fn: dict = field(default_factory=dict)
    tracks: int = 0

    def __post_init__(self):
        for table in (self.within, self.tp, self.fp, self.fn):
            for d in self.thresholds:
                table.setdefault(d, 0)

    def add(self, pred_positions, pred_occluded, gt_positions, gt_visible) -> None:
        err = _errors(pred_positions, gt_positions)
        vis = np.asarray(gt_visible, bool).reshape(-1)
        pvis = ~np.asarray(pred_occluded, bool).reshape(-1)
        if not (err.shape == vis.shape == pvis.shape):
            raise ValueError("length mismatch between predictions and ground truth")
        self.tracks += 1
        self.frames += vis.size
        self.occlusion_correct += int(np.sum(pvis == vis))
        self.visible += int(vis.sum())
        for d in self.thresholds:
            close = err < d
            self.within[d] += int(np.sum(close & vis))
            self.tp[d] += int(np.sum(vis & pvis & close))
            self.fp[d] += int(np.sum(pvis & (~vis | ~close)))
            self.fn[d] += int(np.sum(vis & (~pvis | ~close)))

    def merge(self, other: EvalReport) -> None:
        if tuple(other.thresholds) != tuple(self.thresholds):
            raise ValueError("cannot merge reports with different thresholds")
        self.tracks += other.tracks
        self.frames += other.frames
        self.occlusion_correct += other.occlusion_correct
        self.visible += other.visible
        for d in self.thresholds:
            self.within[d] += other.within[d]
            self.tp[d] += other.tp[d]
            self.fp[d] += other.fp[d]
            self.fn[d] += other.fn[d]

    def jaccard(self, d) -> float | None:
        denom = self.tp[d] + self.fp[d] + self.fn[d]
        return None if denom == 0 else self.tp[d] / denom

    def within_fraction(self, d) -> float | None:
        return None if self.visible == 0 else self.within[d] / self.visible

    @property
    def OA(self) -> float | None:
        return None if self.frames == 0 else self.occlusion_correct / self.frames

    @property
    def delta_avg(self) -> float | None:
        if self.visible == 0:
            return None
        return float(np.mean([self.within_fraction(d) for d in self.thresholds]))

    @property
    def AJ(self) -> float | None:
        scores = [self.jaccard(d) for d in self.thresholds]
        if any(s is None for s in scores):
            return None
        return float(np.mean(scores))

    def to_json(self) -> dict:
        return {
            "AJ": self.AJ,
            "delta_avg": self.delta_avg,
            "OA": self.OA,
            "per_threshold": {
                str(d): {
                    "within": self.within_fraction(d),
                    "jaccard": self.jaccard(d),
                    "tp": self.tp[d],
                    "fp": self.fp[d],
                    "fn": self.fn[d],
                    "within_count": self.within[d],
                }
                for d in self.thresholds
            },
            "counts": {
                "tracks": self.tracks,
                "frames": self.frames,
                "visible": self.visible,
                "occlusion_correct": self.occlusion_correct,
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> EvalReport:
        per = doc["per_threshold"]
        thresholds = tuple(int(k) if float(k).is_integer() else float(k) for k in per)
        rep = cls(thresholds)
        for key, d in zip(per, thresholds):
            rep.tp[d] = per[key]["tp"]
            rep.fp[d] = per[key]["fp"]
            rep.fn[d] = per[key]["fn"]
            rep.within[d] = per[key]["within_count"]
        c = doc["counts"]
        rep.tracks, rep.frames = c["tracks"], c["frames"]
        rep.visible, rep.occlusion_correct = c["visible"], c["occlusion_correct"]
        return rep

    def table(self) -> str:
        def fmt(v):
            return "   n/a" if v is None else f"{100 * v:6.2f}"

        lines = [f"{'metric':<12}{'value':>8}", f"{'AJ':<12}{fmt(self.AJ):>8}",
                 f"{'<delta_avg':<12}{fmt(self.delta_avg):>8}", f"{'OA':<12}{fmt(self.OA):>8}", ""]
        lines.append(f"{'threshold':<12}{'within':>8}{'jaccard':>9}")
        for d in self.thresholds:
            lines.append(f"{d:<12}{fmt(self.within_fraction(d)):>8}{fmt(self.jaccard(d)):>9}")
        lines.append(f"tracks={self.tracks} frames={self.frames} visible={self.visible}")
        return "\n".join(lines)


# -- protocol ---------------------------------------------------------------------


Predictor = Callable[[int, str, np.ndarray], Sequence[Tracklet]]


def rescale_points(points, from_dims, to_dims) -> np.ndarray:
    """Scale (x, y) coordinates from a (W, H) frame to another (W, H) frame."""
    (fw, fh), (tw, th) = from_dims, to_dims
    pts = np.asarray(points, np.float64)
    return pts * np.array([tw / fw, th / fh])


def stride_schedule(track: GroundTruthTrack, stride: int = STRIDE) -> list[int]:
    return [f for f in range(0, track.num_frames, stride) if track.visible[f]]


def query_plan(tracks: Sequence[GroundTruthTrack], mode: str, stride: int = STRIDE):
    """List of (track index, query frame, direction, frames to evaluate)."""
    plan = []
    for i, tr in enumerate(tracks):
        n = tr.num_frames
        if mode == "first":
            vis = np.flatnonzero(tr.visible)
            if vis.size == 0:
                continue
            q = int(vis[0])
            if q + 1 < n:
                plan.append((i, q, "forward", list(range(q + 1, n))))
        elif mode == "strided":
            for q in stride_schedule(tr, stride):
                if q + 1 < n:
                    plan.append((i, q, "forward", list(range(q + 1, n))))
                if q > 0:
                    plan.append((i, q, "backward", list(range(q - 1, -1, -1))))
        else:
            raise ValueError(f"mode must be 'first' or 'strided', got {mode!r}")
    return plan


def evaluate(
    predict: Predictor,
    tracks: Sequence[GroundTruthTrack],
    mode: str = "first",
    rescale=None,
    stride: int = STRIDE,
) -> EvalReport:
    """Run the query protocol for ``mode`` and pool the metrics.

    ``predict(start, direction, queries)`` returns tracklets for queries
    given on frame ``start``; their ``frames`` must cover every frame the
    protocol evaluates. ``rescale=((W, H) tracker, (W, H) evaluation)``
    maps ground truth into tracker coordinates for the queries and
    predictions back to evaluation coordinates before scoring.
    """
    plan = query_plan(tracks, mode, stride)
    groups: dict[tuple[int, str], list] = {}
    for entry in plan:
        groups.setdefault((entry[1], entry[2]), []).append(entry)

    report = EvalReport()
    for (start, direction) in sorted(groups):
        entries = groups[(start, direction)]
        queries = np.array([tracks[i].positions[start] for i, *_ in entries])
        if rescale is not None:
            queries = rescale_points(queries, rescale[1], rescale[0])
        tracklets = predict(start, direction, queries)
        if len(tracklets) != len(entries):
            raise ValueError(f"predictor returned {len(tracklets)} tracklets for {len(entries)} queries")
        for (i, _, _, frames), tl in zip(entries, tracklets):
            lookup = {f: k for k, f in enumerate(tl.frames)}
            missing = [f for f in frames if f not in lookup]
            if missing:
                raise ValueError(f"prediction from frame {start} ({direction}) lacks frames {missing[:5]}")
            rows = [lookup[f] for f in frames]
            pos = tl.positions[rows]
            if rescale is not None:
                pos = rescale_points(pos, rescale[0], rescale[1])
            gt = tracks[i]
            report.add(pos, tl.occluded[rows], gt.positions[frames], gt.visible[frames])
    return report


# -- files ------------------------------------------------------------------------


def save_tracks(path, tracks: Sequence[GroundTruthTrack], width: int, height: int) -> None:
    doc = {
        "version": TRACKS_VERSION,
        "width": width,
        "height": height,
        "num_frames": tracks[0].num_frames if tracks else 0,
        "points": [
            {"id": int(t.point_id), "positions": t.positions.tolist(), "visible": t.visible.tolist()}
            for t in tracks
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_tracks(path) -> tuple[list[GroundTruthTrack], tuple[int, int]]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != TRACKS_VERSION:
        raise ValueError(f"{path}: unsupported track file version {doc.get('version')!r}")
    tracks = [GroundTruthTrack(p["positions"], p["visible"], p.get("id", k)) for k, p in enumerate(doc["points"])]
    return tracks, (int(doc["width"]), int(doc["height"]))
