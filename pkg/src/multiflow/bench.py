"""Dataset synthesis, tracker-backed predictors and delta-set ablations."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import flowio
from .core import Tracklet
from .metrics import EvalReport, GroundTruthTrack, evaluate, save_tracks
from .selector import DEFAULT_OCCLUSION_THRESHOLD
from .synth import (
    NoiseModel,
    SceneModel,
    SyntheticProvider,
    occluder_layer,
    random_scene,
    render_frame,
    save_scene,
    trajectories,
)
from .tracker import DeltaSet, extract_tracklets, track_sequence

log = logging.getLogger(__name__)


def sequence_frames(start: int, direction: str, num_frames: int) -> list[int]:
    if direction in ("forward", "fwd"):
        return list(range(start, num_frames))
    return list(range(start, -1, -1))


def tracker_predictor(
    provider,
    num_frames: int,
    deltas,
    threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
    clamp: bool = True,
    workers: int = 1,
):
    """A predictor for :func:`metrics.evaluate` that runs the dense tracker."""

    def predict(start: int, direction: str, queries) -> list[Tracklet]:
        frames = sequence_frames(start, direction, num_frames)
        results = track_sequence(
            provider, len(frames), deltas, threshold, direction, start, clamp=clamp, workers=workers
        )
        return extract_tracklets(results, queries, threshold, frames)

    return predict


def sample_tracks(scene: SceneModel, num_points: int, rng: np.random.Generator) -> list[GroundTruthTrack]:
    """Ground-truth tracks of surface points picked on random frames at random pixels."""
    frames = rng.integers(0, scene.num_frames, num_points)
    xs = rng.uniform(0, scene.width - 1, num_points)
    ys = rng.uniform(0, scene.height - 1, num_points)
    tracks: list[GroundTruthTrack | None] = [None] * num_points
    for f in np.unique(frames):
        idx = np.flatnonzero(frames == f)
        pt = trajectories(scene, np.stack([xs[idx], ys[idx]], axis=1), int(f))
        for k, i in enumerate(idx):
            tracks[i] = GroundTruthTrack(pt.positions[k], pt.visible[k], int(i))
    return tracks


def synthesize(
    scene: SceneModel,
    out_dir,
    deltas,
    noise: NoiseModel | None = None,
    seed: int = 0,
    num_points: int = 32,
    render: bool = True,
) -> dict:
    """Write a precomputed-flow dataset for ``scene`` under ``out_dir``.

    Produces triplets for every pair the delta set needs (both
    directions), ``manifest.json``, ``tracks.json`` with sampled
    ground-truth tracks, ``scene.json`` and, if ``render``, PPM frames.
    """
    from .visualize import frame_path, write_ppm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    deltas = DeltaSet.coerce(deltas)
    pairs = flowio.required_pairs(scene.num_frames, deltas)
    provider = SyntheticProvider(scene, noise, cache=False)
    table = flowio.export_pairs(provider, out, pairs)
    flowio.write_manifest(out / "manifest.json", scene.width, scene.height, scene.num_frames, deltas, table)
    rng = np.random.default_rng(seed)
    tracks = sample_tracks(scene, num_points, rng)
    save_tracks(out / "tracks.json", tracks, scene.width, scene.height)
    save_scene(scene, out / "scene.json")
    if render:
        (out / "frames").mkdir(exist_ok=True)
        for t in range(scene.num_frames):
            write_ppm(frame_path(out / "frames", t), render_frame(scene, t))
    return {"pairs": len(table), "tracks": len(tracks), "frames": scene.num_frames}


@dataclass
class BenchCase:
    provider: object
    tracks: Sequence[GroundTruthTrack]
    num_frames: int
    clamp: bool = True


@dataclass
class AblationRow:
    deltas: DeltaSet
    AJ: float | None
    delta_avg: float | None
    OA: float | None
    reports: list

    def as_dict(self) -> dict:
        return {"deltas": str(self.deltas), "AJ": self.AJ, "delta_avg": self.delta_avg, "OA": self.OA}


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def run_ablation(
    cases: Sequence[BenchCase],
    delta_sets: Sequence,
    mode: str = "first",
    threshold: float = DEFAULT_OCCLUSION_THRESHOLD,
) -> list[AblationRow]:
    """Evaluate each delta set on every case; metrics are averaged over cases."""
    sets = [DeltaSet.coerce(d) for d in delta_sets]
    seen = set()
    for d in sets:
        if d.deltas in seen:
            log.warning("delta set %s listed more than once", d)
        seen.add(d.deltas)
    rows = []
    for d in sets:
        reports: list[EvalReport] = []
        for case in cases:
            predict = tracker_predictor(case.provider, case.num_frames, d, threshold, clamp=case.clamp)
            reports.append(evaluate(predict, case.tracks, mode))
        rows.append(
            AblationRow(
                d,
                _mean(r.AJ for r in reports),
                _mean(r.delta_avg for r in reports),
                _mean(r.OA for r in reports),
                reports,
            )
        )
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    width = max([len("delta set")] + [len(str(r.deltas)) for r in rows]) + 2

    def fmt(v):
        return "   n/a" if v is None else f"{100 * v:6.1f}"

    lines = [f"{'delta set':<{width}}{'AJ':>8}{'<d_avg':>8}{'OA':>8}"]
    for r in rows:
        lines.append(f"{str(r.deltas):<{width}}{fmt(r.AJ):>8}{fmt(r.delta_avg):>8}{fmt(r.OA):>8}")
    return "\n".join(lines)


def occluded_scene(
    rng: np.random.Generator,
    width: int = 64,
    height: int = 64,
    num_frames: int = 40,
    num_sprites: int = 2,
    num_occluders: int = 2,
    max_gap: int = 12,
    motion: str = "smooth",
) -> SceneModel:
    """Random scene plus scripted occluders that cover part of the view for 1..max_gap frames."""
    scene = random_scene(rng, width, height, num_frames, num_sprites, motion)
    for _ in range(num_occluders):
        gap = int(rng.integers(1, max_gap + 1))
        a = int(rng.integers(1, max(2, num_frames - gap)))
        b = min(a + gap - 1, num_frames - 1)
        sw = int(rng.integers(width // 6, width // 3))
        sh = int(rng.integers(height // 6, height // 3))
        x0 = int(rng.integers(0, width - sw))
        y0 = int(rng.integers(0, height - sh))
        scene.layers.append(occluder_layer((x0, y0, x0 + sw, y0 + sh), (a, b), num_frames))
    return SceneModel(scene.width, scene.height, scene.num_frames, scene.layers)
