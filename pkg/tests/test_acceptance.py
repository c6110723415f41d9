"""Acceptance suite.

Each test prints exactly one line ``[criterion N] PASS|FAIL <title>: <detail>``
straight to the terminal (also under output capture), then asserts.
"""

from __future__ import annotations

import json
import time

import numpy as np

from multiflow import flowio
from multiflow.bench import BenchCase, occluded_scene, run_ablation, sample_tracks
from multiflow.cli import main as cli_main
from multiflow.core import FlowField, FouTriplet, ScalarMap, identity_triplet
from multiflow.metrics import (
    EvalReport,
    average_jaccard,
    jaccard_counts,
    occlusion_accuracy,
    pck_t,
    position_accuracy,
    within_fractions,
)
from multiflow.synth import (
    NoiseModel,
    Region,
    SceneModel,
    SyntheticProvider,
    corrupt,
    huber,
    make_layer,
    occluder_layer,
    random_scene,
    save_scene,
    trajectories,
    uncertainty_loss,
)
from multiflow.tracker import DEFAULT_DELTAS, DeltaSet, Tracker, extract_tracklets, track_sequence
from reference_tracker import reference_track


def verdict(capsys, number: int, title: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    assert ok, detail


# -- 1 ----------------------------------------------------------------------------


def test_c1_oracle_equivalence(capsys):
    """Vectorized engine vs independent per-point loops, 20 noisy scenes."""
    t0 = time.perf_counter()
    deltas = list(DEFAULT_DELTAS.deltas)
    worst, mismatched, checked = 0.0, 0, 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        scene = random_scene(rng, 64, 64, 30, num_sprites=2, motion="smooth" if seed % 2 else "dyadic")
        noise = NoiseModel(0.1, 0.5, gross_prob=0.005, gross_magnitude=20.0, flip_prob=0.01, seed=seed)
        prov = SyntheticProvider(scene, noise)
        picks = [np.zeros((64, 64), np.int16)]
        results = track_sequence(prov, 30, DEFAULT_DELTAS, on_step=lambda tr, r: picks.append(tr.last_selection.data))
        # random interior pixels plus every corner
        pts = [tuple(int(v) for v in p) for p in rng.integers(0, 64, (92, 2))] + [(0, 0), (63, 0), (0, 63), (63, 63)]
        ref_flow, ref_pick = reference_track(prov, 30, deltas, 0.02, pts)
        for t in range(30):
            res = results[t]
            for i, (x, y) in enumerate(pts):
                got = (res.flow.data[y, x, 0], res.flow.data[y, x, 1], res.occlusion.data[y, x], res.uncertainty.data[y, x])
                worst = max(worst, max(abs(float(a) - b) for a, b in zip(got[:2], ref_flow[t][i][:2])))
                mismatched += int(picks[t][y, x] != ref_pick[t][i])
                mismatched += int(any(float(a) != b for a, b in zip(got[2:], ref_flow[t][i][2:])))
                checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and mismatched == 0 and elapsed < 60
    verdict(
        capsys, 1, "oracle equivalence",
        ok, f"20 scenes, {checked} point-frames, max |flow diff| {worst:.1e} px, {mismatched} index/map mismatches, {elapsed:.1f} s",
    )


# -- 2 ----------------------------------------------------------------------------


def _interior_points(scene: SceneModel):
    """Frame-0 pixels that stay in view, unoccluded, with all four bilinear taps on their own layer."""
    ys, xs = np.mgrid[0 : scene.height, 0 : scene.width]
    pts = np.stack([xs.ravel(), ys.ravel()], 1).astype(np.float64)
    tr = trajectories(scene, pts, 0)
    keep = tr.visible.all(axis=1)
    for t in range(scene.num_frames):
        lm = scene.layer_map(t)
        px, py = tr.positions[:, t, 0], tr.positions[:, t, 1]
        inside = (px >= 0) & (px <= scene.width - 1) & (py >= 0) & (py <= scene.height - 1)
        keep &= inside
        x0 = np.clip(np.floor(px), 0, scene.width - 2).astype(int)
        y0 = np.clip(np.floor(py), 0, scene.height - 2).astype(int)
        for dx in (0, 1):
            for dy in (0, 1):
                keep &= lm[y0 + dy, x0 + dx] == tr.layers
    return pts[keep], tr.positions[keep]


def test_c2_exact_flow_zero_error(capsys):
    sets = [DeltaSet.parse(s) for s in ("1", "1,2,4,8,16,32", "inf,1", "inf,1,2,4,8,16,32")]
    worst = {"dyadic": 0.0, "smooth": 0.0}
    counts = {"dyadic": 0, "smooth": 0}
    for seed in range(8):
        motion = "dyadic" if seed < 5 else "smooth"
        scene = random_scene(np.random.default_rng(100 + seed), 64, 64, 30, num_sprites=2, motion=motion)
        pts, gt = _interior_points(scene)
        prov = SyntheticProvider(scene)
        for d in sets:
            res = track_sequence(prov, 30, d)
            tls = extract_tracklets(res, pts)
            pred = np.stack([t.positions for t in tls])
            err = np.abs(pred - gt).max() if len(pts) else 0.0
            worst[motion] = max(worst[motion], float(err))
            counts[motion] += len(pts)
    ok = worst["dyadic"] == 0.0 and worst["smooth"] <= 1e-4 and min(counts.values()) > 1000
    verdict(
        capsys, 2, "exact-flow zero error",
        ok,
        f"piecewise-affine (dyadic) max err {worst['dyadic']:.1e} px over {counts['dyadic']} point-runs (tol 0); "
        f"rotating/scaling max err {worst['smooth']:.1e} px over {counts['smooth']} (tol 1e-4); D in {{1}}, {{1..32}}, {{inf,1}}, {{inf,1..32}}",
    )


# -- 3 ----------------------------------------------------------------------------


def _gap_scene(gap: int, start: int = 5, tail: int = 20):
    n = start + gap + tail
    bg = make_layer(Region("plane"), n, velocity=(0.125, 0.0625))
    occ = occluder_layer((12, 12, 52, 52), (start, start + gap - 1), n)
    return SceneModel(64, 64, n, [bg, occ]), start, start + gap - 1


def test_c3_occlusion_recovery(capsys):
    deltas = DeltaSet.parse("1,2,4,8,16,32")
    qs = np.array([(x, y) for x in range(20, 31, 2) for y in range(20, 31, 2)], np.float64)
    notes, ok = [], True
    for gap in (3, 7, 15, 31):
        scene, a, b = _gap_scene(gap)
        gt = trajectories(scene, qs, 0)
        assert gt.visible[:, :a].all() and not gt.visible[:, a : b + 1].any() and gt.visible[:, b + 1 :].all()
        tls = extract_tracklets(track_sequence(SyntheticProvider(scene), scene.num_frames, deltas), qs)
        flags = np.stack([t.occluded for t in tls])
        pos = np.stack([t.positions for t in tls])
        err = float(np.abs(pos[:, b + 1 :] - gt.positions[:, b + 1 :]).max())
        flags_ok = np.array_equal(flags, ~gt.visible)
        ok &= err < 1e-4 and flags_ok
        notes.append(f"g={gap}: post-gap err {err:.1e}, flags {'ok' if flags_ok else 'WRONG'}")
    scene, a, b = _gap_scene(64)
    tls = extract_tracklets(track_sequence(SyntheticProvider(scene), scene.num_frames, deltas), qs)
    lost = all(t.occluded[a:].all() for t in tls)
    ok &= lost
    notes.append(f"g=64: {'lost (flag stays occluded)' if lost else 'NOT lost'}")
    verdict(capsys, 3, "occlusion recovery", ok, "; ".join(notes))


# -- 4 ----------------------------------------------------------------------------

ABLATION_SETS = ["inf,1,2,4,8,16,32", "inf,1", "1", "inf"]


def ablation_benchmark(num_scenes: int = 10, seed0: int = 100):
    """Occluded scenes with noise whose std grows as 0.1 * sqrt(gap)."""
    cases = []
    for i in range(num_scenes):
        rng = np.random.default_rng(seed0 + i)
        scene = occluded_scene(rng, 64, 64, 40, num_sprites=2, num_occluders=2, max_gap=12, motion="smooth")
        noise = NoiseModel(0.1, 0.5, gross_prob=0.005, gross_magnitude=20.0, flip_prob=0.0, seed=seed0 + i)
        cases.append(BenchCase(SyntheticProvider(scene, noise), sample_tracks(scene, 64, rng), scene.num_frames))
    return cases


def test_c4_delta_ablation_ordering(capsys):
    rows = run_ablation(ablation_benchmark(), ABLATION_SETS, "first")
    d = {str(r.deltas): 100 * r.delta_avg for r in rows}
    full, two, one, direct = d["inf,1,2,4,8,16,32"], d["inf,1"], d["1"], d["inf"]
    ordering = full >= two >= one and two >= direct
    margins = full - one >= 2.0 and full - direct >= 2.0
    verdict(
        capsys, 4, "delta-ablation ordering",
        ordering and margins,
        f"<d_avg full {full:.2f}, {{inf,1}} {two:.2f}, {{1}} {one:.2f}, {{inf}} {direct:.2f}; "
        f"ordering {'holds' if ordering else 'violated'}; margin over {{1}} {full - one:+.2f}, over {{inf}} {full - direct:+.2f} (need >= 2)",
    )


# -- 5 ----------------------------------------------------------------------------


def test_c5_metric_units(capsys):
    checks = {
        "OA 3/4": occlusion_accuracy([False, True, False, True], [True, False, True, True]) == 0.75,
        "OA all": occlusion_accuracy([False, True], [True, False]) == 1.0,
        "OA inverted": occlusion_accuracy([True, False], [True, False]) == 0.0,
        "d_avg exact": position_accuracy([[1, 2]], [[1, 2]], [True]) == 1.0,
        "d_avg 3px": position_accuracy([[3, 0]], [[0, 0]], [True]) == 0.6,
        "d_avg 20px": position_accuracy([[20, 0]], [[0, 0]], [True]) == 0.0,
        "d_avg absent": position_accuracy([[0, 0]], [[0, 0]], [False]) is None,
        "AJ perfect": average_jaccard([[0, 0]], [False], [[0, 0]], [True]) == 1.0,
        "AJ all FN": average_jaccard([[0, 0]], [True], [[0, 0]], [True]) == 0.0,
        "AJ 0.8": abs(average_jaccard([[1.5, 0], [5, 5]], [False, True], [[0, 0], [0, 0]], [True, False]) - 0.8) < 1e-12,
        "PCK exact": pck_t([[0, 0]], [[0, 0]], 100) == 1.0,
        "PCK 1.9": pck_t([[1.9, 0]], [[0, 0]], 100) == 1.0,
        "PCK 2.1": pck_t([[2.1, 0]], [[0, 0]], 100) == 0.0,
    }
    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        gt = rng.uniform(0, 256, (n, 2))
        pred = gt + rng.normal(0, rng.choice([0.5, 2, 8, 30]), (n, 2))
        vis = rng.random(n) < rng.uniform(0.2, 1.0)
        pocc = rng.random(n) < rng.uniform(0.0, 0.6)
        fr = within_fractions(pred, gt, vis)
        if fr is not None:
            v = list(fr.values())
            violations += v != sorted(v)
        jac = []
        for dlt in (1, 2, 4, 8, 16):
            tp, fp, fn = jaccard_counts(pred, pocc, gt, vis, dlt)
            jac.append(tp / (tp + fp + fn) if tp + fp + fn else None)
        if None not in jac:
            violations += jac != sorted(jac)
        a, b = EvalReport(), EvalReport()
        a.add(pred, pocc, gt, vis)
        b.add(2 * pred, pocc, 2 * gt, vis)
        violations += a.OA != b.OA
        violations += any(b.within[2 * dlt] != a.within[dlt] for dlt in (1, 2, 4, 8))
        if a.AJ is not None:
            err = np.linalg.norm(pred - gt, axis=1)
            all_tp = bool(np.all(vis & ~pocc & (err < 1)))
            violations += (a.AJ == 1.0) != all_tp or not 0 <= a.AJ <= 1
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and violations == 0
    verdict(
        capsys, 5, "metric unit suite",
        ok, f"{len(checks) - len(failed)}/{len(checks)} hand examples, {violations} invariant violations over 1000 random track pairs"
        + (f"; failed: {failed}" if failed else ""),
    )


# -- 6 ----------------------------------------------------------------------------


def test_c6_storage_bound(tmp_path, capsys):
    notes, ok = [], True
    peak_all = {}
    for n in (10, 50, 200):
        scene = SceneModel(12, 10, n, [make_layer(Region("plane"), n, velocity=(0.25, 0.125))])
        scene_path = tmp_path / f"scene{n}.json"
        save_scene(scene, scene_path)
        for dtext in ("1,2,4", "1,2,4,8,16,32"):
            d = DeltaSet.parse(dtext)
            out = tmp_path / f"d{n}_{len(d.deltas)}"
            rc = cli_main(["synth", "--scene", str(scene_path), "--out", str(out), "--deltas", dtext, "--no-frames", "--num-points", "4"])
            pairs = len(json.loads((out / "manifest.json").read_text())["pairs"])
            bound = 2 * n * len(d.deltas)
            peak = []
            prov = flowio.precomputed_provider(out / "manifest.json")
            track_sequence(prov, n, d, clamp=False, on_step=lambda tr, r: peak.append(len(tr.memory)))
            peak_all[(n, dtext)] = max(peak)
            ok &= rc == 0 and pairs <= bound and max(peak) <= d.max_integer + 1
            notes.append(f"N={n} D={{{dtext}}}: {pairs}/{bound} triplets, peak memory {max(peak)}/{d.max_integer + 1}")
    verdict(capsys, 6, "storage bound", ok, "; ".join(notes))


# -- 7 ----------------------------------------------------------------------------


class _PoolProvider:
    """Serves a few precomputed random 512x512 triplets relabelled to the requested pair."""

    def __init__(self, rng, size=512, count=9):
        self.width = self.height = size
        self.pool = [
            FouTriplet(
                rng.normal(0, 2, (size, size, 2)).astype(np.float32),
                rng.uniform(0, 0.04, (size, size)).astype(np.float32),
                rng.uniform(0, 1, (size, size)).astype(np.float32),
                0,
                1,
            )
            for _ in range(count)
        ]

    def get(self, src, dst):
        return self.pool[(7 * src + dst) % len(self.pool)].with_frames(src, dst)


def test_c7_throughput(capsys):
    prov = _PoolProvider(np.random.default_rng(7))
    tr = Tracker(512, 512, DEFAULT_DELTAS)
    for _ in range(33):  # past the ramp-up, every step now has 7 distinct candidates
        tr.step(prov)
    times = []
    for _ in range(100):
        assert len(set(tr.candidate_sources(tr.current_frame + 1))) == 7
        t0 = time.perf_counter()
        tr.step(prov)
        times.append(time.perf_counter() - t0)
    med = 1000 * float(np.median(times))
    verdict(
        capsys, 7, "throughput",
        med < 150.0, f"median {med:.1f} ms per frame (7 candidates, 512x512, 100 frames; p90 {1000 * np.percentile(times, 90):.1f} ms; budget 150 ms)",
    )


# -- 8 ----------------------------------------------------------------------------


def test_c8_uncertainty_calibration(capsys):
    noise = NoiseModel(sigma_scale=0.5, sigma_exponent=0.5, gross_prob=0.0, seed=8)
    fou = corrupt(identity_triplet(100, 100, 0).with_frames(0, 1), noise)
    pred = fou.flow.data.reshape(-1, 2).astype(np.float64)  # ground truth is zero flow
    emitted = float(np.unique(fou.uncertainty.data)[0])
    step = 0.01
    grid = np.arange(0.05, 1.0 + step / 2, step)
    mean_loss = np.array([np.mean(uncertainty_loss(pred, np.zeros_like(pred), s2)) for s2 in grid])
    best = float(grid[np.argmin(mean_loss)])
    r = np.linalg.norm(pred, axis=1)
    stationary = float(np.mean(huber(r, 1.0)))  # minimizer of the mean loss
    ok = abs(best - emitted) <= step and abs(best - stationary) <= step
    verdict(
        capsys, 8, "uncertainty calibration",
        ok, f"emitted sigma^2 {emitted:.4f}, grid argmin {best:.2f} (step {step}), stationary point {stationary:.4f}, n={len(pred)}",
    )


# -- 9 ----------------------------------------------------------------------------


def _random_values(rng, shape):
    v = rng.normal(0, 10.0 ** rng.integers(-3, 6), shape).astype(np.float32)
    specials = np.array([0.0, -0.0, 1e-45, -1e-45, 3.4e38, -3.4e38, 1.17549435e-38], np.float32)
    mask = rng.random(shape) < 0.05
    v[mask] = rng.choice(specials, int(mask.sum()))
    return v


def test_c9_bit_exact_io(tmp_path, capsys):
    rng = np.random.default_rng(9)
    mismatches = 0
    for i in range(1000):
        h, w = (int(v) for v in rng.integers(1, 24, 2))
        f = FlowField(_random_values(rng, (h, w, 2)))
        occ = ScalarMap(rng.random((h, w)).astype(np.float32))
        unc = ScalarMap(np.abs(_random_values(rng, (h, w))))
        if i % 50 == 0:  # some roundtrips go through the file system
            flowio.write_flo(tmp_path / "f.flo", f)
            flowio.write_map(tmp_path / "u.map", unc, flowio.UNCERTAINTY)
            f2, u2 = flowio.read_flo(tmp_path / "f.flo"), flowio.read_map(tmp_path / "u.map", flowio.UNCERTAINTY)
        else:
            f2 = flowio.decode_flo(flowio.encode_flo(f))
            u2 = flowio.decode_map(flowio.encode_map(unc, flowio.UNCERTAINTY), flowio.UNCERTAINTY)[0]
        o2 = flowio.decode_map(flowio.encode_map(occ, flowio.OCCLUSION), flowio.OCCLUSION)[0]
        mismatches += f2.data.tobytes() != f.data.tobytes()
        mismatches += u2.data.tobytes() != unc.data.tobytes()
        mismatches += o2.data.tobytes() != occ.data.tobytes()

    typed, crashes = 0, []
    good_flo = flowio.encode_flo(FlowField(rng.normal(size=(3, 4, 2))))
    good_map = flowio.encode_map(ScalarMap(rng.random((3, 4))), flowio.OCCLUSION)
    for i in range(1000):
        raw = bytearray(good_flo if i % 2 else good_map)
        header = 12 if i % 2 else 13
        kind = i % 4
        if kind == 0:  # random header bytes
            pos = int(rng.integers(0, header))
            raw[pos] = int(rng.integers(0, 256))
            if raw == (good_flo if i % 2 else good_map):
                raw[pos] ^= 0xFF
        elif kind == 1:  # random dimensions
            off = 4 if i % 2 else 5
            raw[off : off + 8] = np.array(rng.integers(-(2**31), 2**31, 2), "<i4").tobytes()
        elif kind == 2:  # truncation
            raw = raw[: int(rng.integers(0, len(raw)))]
        else:  # random magic
            raw[0:4] = rng.integers(0, 256, 4, dtype=np.uint8).tobytes()
            if bytes(raw[:4]) in (good_flo[:4], good_map[:4]):
                raw[0] ^= 0xFF
        try:
            (flowio.decode_flo if i % 2 else flowio.decode_map)(bytes(raw))
        except flowio.FlowIOError:
            typed += 1
        except Exception as exc:  # noqa: BLE001 - any other exception is a crash
            crashes.append(type(exc).__name__)
    ok = mismatches == 0 and not crashes
    verdict(
        capsys, 9, "bit-exact I/O",
        ok, f"1000 roundtrips x3 grids, {mismatches} mismatches; 1000 fuzzed headers: {typed} typed errors, "
        f"{1000 - typed - len(crashes)} still valid, {len(crashes)} crashes",
    )
