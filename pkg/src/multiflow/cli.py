"""Command-line interface: synth, track, eval, ablate, visualize.

Exit codes: 0 success, 1 usage error, 2 data error. Every command takes
``--config FILE`` (JSON object keyed by long option names); explicit flags
win over values from the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import flowio
from .bench import BenchCase, ablation_table, run_ablation, sequence_frames, synthesize
from .core import GridError, Tracklet
from .metrics import evaluate, load_tracks
from .selector import DEFAULT_OCCLUSION_THRESHOLD
from .synth import NoiseModel, SceneError, SyntheticProvider, load_scene
from .tracker import DEFAULT_DELTAS, DeltaSet, ProviderError, extract_tracklets, track_sequence
from .visualize import ImageError, frame_path, overlay, read_ppm, write_ppm

log = logging.getLogger("multiflow")

TRACKLETS_VERSION = 1
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _deltas(text: str) -> DeltaSet:
    try:
        return DeltaSet.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dims(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _rescale(text: str):
    try:
        a, b = text.split(":")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH:WxH, got {text!r}") from None
    return _dims(a), _dims(b)


def _threshold(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("occlusion threshold must be in (0, 1)")
    return v


def _noise_from_args(args) -> NoiseModel | None:
    params = {}
    if args.noise:
        params.update(json.loads(Path(args.noise).read_text()))
    for key in ("sigma_scale", "sigma_exponent", "gross_prob", "gross_magnitude", "flip_prob"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if not params:
        return None
    params["seed"] = args.seed
    return NoiseModel.from_json(params)


# -- tracklet files -------------------------------------------------------------


def tracklets_to_json(tracklets) -> list:
    return [
        {
            "query": list(t.query),
            "frames": list(t.frames),
            "positions": t.positions.tolist(),
            "occlusion": t.occlusion_score.tolist(),
            "occluded": t.occluded.tolist(),
        }
        for t in tracklets
    ]


def tracklets_from_json(items, threshold: float) -> list[Tracklet]:
    return [
        Tracklet(tuple(d["query"]), d["frames"], d["positions"], d["occlusion"], d["occluded"], threshold)
        for d in items
    ]


def load_runs(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != TRACKLETS_VERSION:
        raise DataError(f"{path}: unsupported tracklet file version {doc.get('version')!r}")
    thr = doc.get("occlusion_threshold", DEFAULT_OCCLUSION_THRESHOLD)
    runs = {}
    for run in doc["runs"]:
        key = (int(run["start"]), run["direction"])
        runs.setdefault(key, []).extend(tracklets_from_json(run["tracklets"], thr))
    return runs, doc


def runs_predictor(runs):
    """Serve predictions out of a tracklet file, matching queries by position."""

    def predict(start, direction, queries):
        pool = runs.get((start, direction))
        if pool is None:
            raise DataError(f"tracklet file has no run from frame {start} ({direction})")
        qs = np.array([t.query for t in pool]).reshape(-1, 2)
        out = []
        for q in np.asarray(queries).reshape(-1, 2):
            d = np.abs(qs - q).max(axis=1) if len(qs) else np.array([])
            if d.size == 0 or d.min() > 1e-4:
                raise DataError(f"no tracklet for query ({q[0]:.3f}, {q[1]:.3f}) from frame {start}")
            out.append(pool[int(np.argmin(d))])
        return out

    return predict


# -- commands ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    scene = load_scene(args.scene)
    noise = _noise_from_args(args)
    summary = synthesize(scene, args.out, args.deltas, noise, args.seed, args.num_points, not args.no_frames)
    print(f"wrote {summary['pairs']} flow triplets, {summary['tracks']} tracks, {summary['frames']} frames to {args.out}")
    return 0


def _provider_from_args(args):
    if args.manifest and args.scene:
        raise UsageError("give either --manifest or --scene, not both")
    if args.manifest:
        return flowio.precomputed_provider(args.manifest), False
    if args.scene:
        scene = load_scene(args.scene)
        return SyntheticProvider(scene, _noise_from_args(args)), True
    raise UsageError("one of --manifest or --scene is required")


def _load_queries(path):
    doc = json.loads(Path(path).read_text())
    pts = doc.get("queries", []) if isinstance(doc, dict) else doc
    return np.asarray(pts, np.float64).reshape(-1, 2)


def cmd_track(args) -> int:
    provider, online = _provider_from_args(args)
    if not online and args.deltas.has_inf:
        raise UsageError(
            "delta sets containing inf need direct flows, which precomputed manifests do not hold; "
            "use an integer-only set such as 1,2,4,8,16,32"
        )
    n = provider.num_frames
    threshold = args.occl_thresh
    runs = []

    def run(start, direction, queries, dense_dir=None):
        frames = sequence_frames(start, direction, n)
        results = track_sequence(provider, len(frames), args.deltas, threshold, direction, start, clamp=online)
        if dense_dir is not None:
            _write_dense(dense_dir, results, frames)
        tls = extract_tracklets(results, queries, threshold, frames) if len(queries) else []
        runs.append({"start": start, "direction": direction, "tracklets": tracklets_to_json(tls)})

    if args.gt:
        if args.queries:
            raise UsageError("give either --queries or --gt, not both")
        tracks, _ = load_tracks(args.gt)
        from .metrics import query_plan

        groups = {}
        for i, q, direction, _ in query_plan(tracks, args.mode):
            groups.setdefault((q, direction), []).append(tracks[i].positions[q])
        for (start, direction), pts in sorted(groups.items()):
            run(start, direction, np.array(pts))
    else:
        queries = _load_queries(args.queries) if args.queries else np.zeros((0, 2))
        direction = "forward" if args.direction in ("fwd", "forward") else "backward"
        start = args.start if args.start is not None else (0 if direction == "forward" else n - 1)
        run(start, direction, queries, args.dense_out)

    doc = {
        "version": TRACKLETS_VERSION,
        "deltas": str(args.deltas),
        "occlusion_threshold": threshold,
        "width": provider.width,
        "height": provider.height,
        "num_frames": n,
        "runs": runs,
    }
    Path(args.out).write_text(json.dumps(doc))
    count = sum(len(r["tracklets"]) for r in runs)
    print(f"wrote {count} tracklets in {len(runs)} run(s) to {args.out}")
    return 0


def _write_dense(out_dir, results, frames) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for res, f in zip(results, frames):
        flowio.write_flo(out / f"{f:05d}.flo", res.flow)
        flowio.write_map(out / f"{f:05d}.occl.map", res.occlusion, flowio.OCCLUSION)
        flowio.write_map(out / f"{f:05d}.unc.map", res.uncertainty, flowio.UNCERTAINTY)
    (out / "meta.json").write_text(json.dumps({"reference": frames[0], "frames": frames}))


def cmd_eval(args) -> int:
    runs, _ = load_runs(args.tracklets)
    tracks, _ = load_tracks(args.gt)
    report = evaluate(runs_predictor(runs), tracks, args.mode, args.rescale)
    print(report.table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_ablate(args) -> int:
    if not args.delta_sets:
        raise UsageError("at least one --set is required")
    cases = []
    if args.manifest:
        if any(d.has_inf for d in args.delta_sets):
            raise UsageError("delta sets containing inf cannot run on a precomputed manifest")
        if not args.gt:
            raise UsageError("--gt is required with --manifest")
        provider = flowio.precomputed_provider(args.manifest)
        tracks, _ = load_tracks(args.gt)
        cases.append(BenchCase(provider, tracks, provider.num_frames, clamp=False))
    elif args.scene:
        noise = _noise_from_args(args)
        rng = np.random.default_rng(args.seed)
        from .bench import sample_tracks

        for path in args.scene:
            scene = load_scene(path)
            cases.append(BenchCase(SyntheticProvider(scene, noise), sample_tracks(scene, args.num_points, rng), scene.num_frames))
    else:
        raise UsageError("one of --manifest or --scene is required")
    rows = run_ablation(cases, args.delta_sets, args.mode, args.occl_thresh)
    seen = set()
    for r in rows:
        if r.deltas.deltas in seen:
            print(f"warning: delta set {r.deltas} listed more than once", file=sys.stderr)
        seen.add(r.deltas.deltas)
    print(ablation_table(rows))
    if args.out:
        Path(args.out).write_text(json.dumps([r.as_dict() for r in rows], indent=2))
    return 0


def cmd_visualize(args) -> int:
    dense = Path(args.results)
    try:
        meta = json.loads((dense / "meta.json").read_text())
    except OSError as exc:
        raise DataError(f"{dense}: missing dense results ({exc.strerror})") from exc
    frames = meta["frames"]
    ref_path = frame_path(args.frames, meta["reference"])
    if not ref_path.exists():
        raise DataError(f"missing frame {ref_path}")
    reference = read_ppm(ref_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .core import FouTriplet

    for f in frames:
        path = frame_path(args.frames, f)
        if not path.exists():
            raise DataError(f"missing frame {path}")
        flow = flowio.read_flo(dense / f"{f:05d}.flo")
        occ = flowio.read_map(dense / f"{f:05d}.occl.map", flowio.OCCLUSION)
        unc = flowio.read_map(dense / f"{f:05d}.unc.map", flowio.UNCERTAINTY)
        res = FouTriplet(flow.data, occ.data, unc.data, 0, 0)
        write_ppm(frame_path(out, f), overlay(reference, read_ppm(path), res, args.occl_thresh, args.cell))
    print(f"wrote {len(frames)} overlays to {out}")
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with default option values")
        p.add_argument("--seed", type=int, default=0)
        return p

    def tracking(p, default_deltas=DEFAULT_DELTAS):
        p.add_argument("--deltas", type=_deltas, default=default_deltas)
        p.add_argument("--occl-thresh", type=_threshold, default=DEFAULT_OCCLUSION_THRESHOLD)

    def noise(p):
        p.add_argument("--noise", help="JSON noise model")
        p.add_argument("--sigma-scale", type=float)
        p.add_argument("--sigma-exponent", type=float)
        p.add_argument("--gross-prob", type=float)
        p.add_argument("--gross-magnitude", type=float)
        p.add_argument("--flip-prob", type=float)

    p = common(sub.add_parser("synth", help="write a precomputed-flow dataset for a scene"))
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deltas", type=_deltas, default=DeltaSet((1, 2, 4, 8, 16, 32)))
    p.add_argument("--num-points", type=int, default=32)
    p.add_argument("--no-frames", action="store_true")
    noise(p)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("track", help="track query points through a sequence"))
    p.add_argument("--manifest")
    p.add_argument("--scene")
    tracking(p)
    p.add_argument("--queries", help="JSON list of [x, y] on the start frame")
    p.add_argument("--gt", help="ground-truth track file; queries follow --mode")
    p.add_argument("--mode", choices=("first", "strided"), default="first")
    p.add_argument("--direction", choices=("fwd", "bwd", "forward", "backward"), default="fwd")
    p.add_argument("--start", type=int)
    p.add_argument("--dense-out", help="directory for per-frame dense results")
    p.add_argument("--out", required=True)
    noise(p)
    p.set_defaults(func=cmd_track)

    p = common(sub.add_parser("eval", help="score tracklets against ground truth"))
    p.add_argument("--tracklets", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("first", "strided"), default="first")
    p.add_argument("--rescale", type=_rescale, help="tracker:evaluation sizes, e.g. 512x512:256x256")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("ablate", help="compare delta sets"))
    p.add_argument("--manifest")
    p.add_argument("--gt")
    p.add_argument("--scene", nargs="+")
    p.add_argument("--set", dest="delta_sets", type=_deltas, action="append", default=[])
    p.add_argument("--mode", choices=("first", "strided"), default="first")
    p.add_argument("--occl-thresh", type=_threshold, default=DEFAULT_OCCLUSION_THRESHOLD)
    p.add_argument("--num-points", type=int, default=64)
    p.add_argument("--out")
    noise(p)
    p.set_defaults(func=cmd_ablate)

    p = common(sub.add_parser("visualize", help="checkerboard overlays of dense results"))
    p.add_argument("--frames", required=True)
    p.add_argument("--results", required=True, help="directory written by track --dense-out")
    p.add_argument("--out", required=True)
    p.add_argument("--cell", type=int, default=8)
    p.add_argument("--occl-thresh", type=_threshold, default=DEFAULT_OCCLUSION_THRESHOLD)
    p.set_defaults(func=cmd_visualize)
    return parser


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in actions:
            raise UsageError(f"unknown config key {key!r}")
        action = actions[dest]
        if action.type is not None and isinstance(value, str):
            value = action.type(value)
        elif action.type is _deltas and isinstance(value, list):
            value = DeltaSet.parse(",".join(str(v) for v in value))
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:
            # argparse exits on --help and on usage errors
            return exc.code if isinstance(exc.code, int) else EXIT_USAGE
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"multiflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        ProviderError,
        flowio.FlowIOError,
        SceneError,
        GridError,
        ImageError,
        OSError,
        json.JSONDecodeError,
        KeyError,
        ValueError,
    ) as exc:
        print(f"multiflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
