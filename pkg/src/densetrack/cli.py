"""Command-line entry point: ``densetrack <command> ...``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import traceback
from pathlib import Path

import numpy as np

from .bench import bench_schedules, profile_run
from .core import Schedule, TrackState, load_tracks, load_video, save_tracks, save_video
from .metrics import evaluate
from .spectral import flow_spectrum, track_flow
from .strategies import DEFAULT_STRATEGIES, strategy_compare
from .synth import GroundTruth, SceneConfig, generate_scene, opposing_pair
from .tracker import EngineConfig, EngineWeights, run_tracking

GT_FILE = "gt.trk"


class UsageError(Exception):
    pass


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, header, rows, meta: dict):
    lines = [header] + [[_fmt(v) for v in r] for r in rows]
    tail = "# " + ", ".join(f"{k}={v}" for k, v in meta.items())
    if path in (None, "-"):
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerows(lines)
        print(tail)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(lines)
        fh.write(tail + "\n")


def _schedule(text: str) -> Schedule:
    try:
        return Schedule.parse(text)
    except ValueError as exc:
        raise UsageError(f"bad --schedule {text!r}: {exc}") from None


def _refiner(text: str) -> tuple[str, float]:
    if text == "transformer":
        return "transformer", 1.0
    if text.startswith("oracle"):
        _, _, step = text.partition(":")
        try:
            s = float(step) if step else 1.0
        except ValueError:
            raise UsageError(f"bad oracle step in --refiner {text!r}") from None
        if not 0.0 < s <= 1.0:
            raise UsageError(f"oracle step must be in (0, 1], got {s}")
        return "oracle", s
    raise UsageError(f"--refiner must be 'transformer' or 'oracle:<step>', got {text!r}")


def _load_gt(video_dir: Path, video) -> GroundTruth | None:
    p = video_dir / GT_FILE
    if not p.exists():
        return None
    tracks = load_tracks(p)
    T, H, W = video.shape
    if tracks.grid_shape != (H, W) or tracks.T != T:
        raise ValueError(f"{p}: ground truth shape does not match the video")
    vis = (tracks.points[..., 3] >= 0.5).reshape(T, H, W)
    return GroundTruth(tracks, vis, np.zeros((H, W), dtype=np.int64))


def _engine(args, schedule=None) -> tuple[EngineConfig, EngineWeights]:
    kind, step = _refiner(args.refiner)
    if args.weights:
        weights, saved = EngineWeights.load(args.weights)
        base = saved.to_dict()
    else:
        weights, base = None, EngineConfig().to_dict()
    base.update(schedule=list((schedule or _schedule(args.schedule)).factors), sampling=args.sampling,
                sampling_seed=args.sampling_seed, interpolator=args.interp, refiner=kind, step_fraction=step)
    if args.r is not None:
        if weights is not None and args.r != base["r"]:
            raise UsageError(f"--r {args.r} conflicts with r={base['r']} stored in {args.weights}")
        base["r"] = args.r
    try:
        cfg = EngineConfig.from_dict(base)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if weights is None:
        weights = EngineWeights.random(cfg, args.seed)
    return cfg, weights


def _video_and_gt(args, need_gt=False):
    d = Path(args.video)
    video = load_video(d)
    gt = _load_gt(d, video)
    if need_gt and gt is None:
        raise UsageError(f"{d} has no ground truth ({GT_FILE}); needed here")
    return video, gt


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(args):
    if args.opposing:
        cfg = opposing_pair(args.seed, T=args.T, H=args.H, W=args.W)
    else:
        cfg = SceneConfig(seed=args.seed, T=args.T, H=args.H, W=args.W, n_objects=args.objects)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    video, gt = generate_scene(cfg)
    out = Path(args.out)
    save_video(video, out)
    save_tracks(gt.tracks, out / GT_FILE)
    print(f"wrote {cfg.T} frames of {cfg.H}x{cfg.W} to {out}")


def cmd_init_weights(args):
    cfg = EngineConfig(r=args.r)
    EngineWeights.random(cfg, args.seed).save(args.out, cfg)
    print(f"wrote weights (seed {args.seed}) to {args.out}")


def cmd_track(args):
    video, gt = _video_and_gt(args)
    cfg, weights = _engine(args)
    if cfg.refiner == "oracle" and gt is None:
        raise UsageError("the oracle refiner needs ground truth next to the video")
    res = run_tracking(video, cfg, weights, gt=gt, keep_states=False)
    save_tracks(res.tracks, args.out)
    if args.grid_out:
        save_tracks(res.grid, args.grid_out)
    if args.iter_csv:
        rows = [(it.iteration, it.tokens, it.wall_ms, it.epe_tracked, it.epe_interp) for it in res.iterations]
        _write_csv(args.iter_csv, ["iter", "tokens", "wall_ms", "epe_tracked", "epe_interp"], rows,
                   {"seed": args.seed, "schedule": cfg.schedule})
    print(f"tracked {res.tracks.N} points over {res.tracks.T} frames ({res.total_tokens} tokens) -> {args.out}")


def cmd_bench_schedules(args):
    video, gt = _video_and_gt(args)
    schedules = [_schedule(s) for s in args.schedules.split(";") if s.strip()]
    cfg, weights = _engine(args, schedules[0])
    if cfg.refiner == "oracle" and gt is None:
        raise UsageError("the oracle refiner needs ground truth next to the video")
    rows = bench_schedules(video, schedules, cfg, None if not args.weights else weights, gt)
    keys = ["schedule", "tokens", "wall_ms", "epe_all", "epe_vis", "epe_occ"]
    _write_csv(args.out, keys, [[r[k] for k in keys] for r in rows],
               {"seed": args.seed, "schedule": ";".join(str(s) for s in schedules)})


def cmd_strategy_compare(args):
    video, gt = _video_and_gt(args, need_gt=True)
    rows = strategy_compare(video, gt, DEFAULT_STRATEGIES, args.step)
    _write_csv(args.out, ["strategy", "factor", "epe", "apd3d", "wall_ms", "tokens", "note"],
               [(r.strategy, r.factor, r.epe, r.apd3d, r.wall_ms, r.tokens, r.note) for r in rows],
               {"seed": "none", "schedule": "single-step"})


def cmd_spectrum(args):
    if args.tracks:
        st = load_tracks(args.tracks)
        t = args.frame if args.frame is not None else st.T - 1
        prof = flow_spectrum(track_flow(st.points, st.grid_shape, t), args.block)
        _write_csv(args.out, ["freq_index", "mean_abs_coeff"], enumerate(prof.tolist()),
                   {"seed": "none", "schedule": "none", "frame": t})
        return
    if not args.video:
        raise UsageError("spectrum needs --tracks or --video")
    video, gt = _video_and_gt(args)
    cfg, weights = _engine(args)
    res = run_tracking(video, cfg, weights, gt=gt)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = args.frame if args.frame is not None else video.shape[0] - 1
    for it in res.iterations:
        prof = flow_spectrum(track_flow(it.state, res.grid.grid_shape, t), args.block)
        _write_csv(out / f"spectrum_iter{it.iteration}.csv", ["freq_index", "mean_abs_coeff"],
                   enumerate(prof.tolist()), {"seed": args.seed, "schedule": cfg.schedule, "iter": it.iteration})
    print(f"wrote {len(res.iterations)} spectra to {out}")


def cmd_profile(args):
    sizes = []
    for s in args.sizes.split(","):
        try:
            rows, cols = (int(x) for x in s.lower().split("x"))
        except ValueError:
            raise UsageError(f"bad grid size {s!r}; expected ROWSxCOLS") from None
        sizes.append((rows, cols))
    cfg, weights = _engine(args)
    out = []
    for rows, cols in sizes:
        scene = SceneConfig(seed=args.scene_seed, T=args.T, H=rows * cfg.r, W=cols * cfg.r)
        video, gt = generate_scene(scene)
        for rec in profile_run(video, cfg, weights, gt if cfg.refiner == "oracle" else None):
            out.append((rec.stage, rec.iteration, rec.units, rec.wall_ms))
    _write_csv(args.out, ["stage", "iter", "units", "wall_ms"], out,
               {"seed": args.seed, "schedule": cfg.schedule, "sizes": args.sizes})


def cmd_eval(args):
    pred, gt = load_tracks(args.pred), load_tracks(args.gt)
    if pred.N != gt.N and pred.T == gt.T:
        # grid-resolution prediction: compare against the ground-truth pixels it starts from
        H, W = gt.grid_shape
        idx = GroundTruth(gt, np.zeros((gt.T, H, W), bool), np.zeros((H, W), np.int64)).lookup(pred.origin)
        gt = TrackState(gt.points[:, idx], pred.grid_shape)
    if pred.points.shape != gt.points.shape:
        raise ValueError(f"prediction {pred.points.shape} and ground truth {gt.points.shape} differ in shape")
    video = load_video(args.video)
    rows = evaluate(pred, gt, video.intrinsics)
    _write_csv(args.out, ["metric", "split", "value"], rows, {"seed": "none", "schedule": "none"})


# -- parser -----------------------------------------------------------------------


def _engine_flags(p, schedule="8,4,2,1"):
    p.add_argument("--weights", help="engine weights file (default: seeded random weights)")
    p.add_argument("--seed", type=int, default=0, help="seed for random weights")
    p.add_argument("--schedule", default=schedule)
    p.add_argument("--sampling", choices=("uniform", "random", "keypoint"), default="uniform")
    p.add_argument("--sampling-seed", type=int, default=0)
    p.add_argument("--interp", choices=("nearest", "bilinear", "learnable"), default="learnable")
    p.add_argument("--refiner", default="transformer", help="transformer | oracle:<step>")
    p.add_argument("--r", type=int, default=None, help="track-grid pitch in pixels (default 4)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="densetrack", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic RGB-D scene with ground truth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--H", type=int, default=64)
    p.add_argument("--W", type=int, default=64)
    p.add_argument("--objects", type=int, default=2)
    p.add_argument("--opposing", action="store_true", help="two abutting quads with opposite velocities")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init-weights", help="write seeded random engine weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("track", help="run coarse-to-fine tracking on a video directory")
    p.add_argument("--video", required=True)
    _engine_flags(p)
    p.add_argument("--out", required=True, help="full-resolution track file")
    p.add_argument("--grid-out", help="optional grid-resolution track file")
    p.add_argument("--iter-csv", help="per-iteration CSV")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("bench-schedules", help="tokens, runtime and EPE per schedule")
    p.add_argument("--video", required=True)
    _engine_flags(p)
    p.add_argument("--schedules", default="1,1,1,1;8,4,2,1", help="';'-separated schedules")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench_schedules)

    p = sub.add_parser("strategy-compare", help="cost-reduction strategies with the oracle refiner")
    p.add_argument("--video", required=True)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_strategy_compare)

    p = sub.add_parser("spectrum", help="block-DCT spectra of tracked flow")
    p.add_argument("--tracks", help="spectrum of one track file (written to --out)")
    p.add_argument("--video", help="run tracking and write one spectrum per iteration to --out-dir")
    _engine_flags(p)
    p.add_argument("--frame", type=int)
    p.add_argument("--block", type=int, default=8)
    p.add_argument("--out", default="-")
    p.add_argument("--out-dir", default="spectra")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("profile", help="per-stage timings on synthetic scenes")
    _engine_flags(p, schedule="1")
    p.add_argument("--sizes", default="32x32,64x64,128x128", help="track grid sizes ROWSxCOLS")
    p.add_argument("--T", type=int, default=2)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("eval", help="metrics between a predicted and a ground-truth track file")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--video", required=True, help="video directory (for intrinsics)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)
    return ap


def _where(exc: BaseException) -> str:
    mod = "densetrack"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("densetrack") and name != __name__:
            mod = name
    return mod


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"densetrack {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: name the module that raised
        print(f"densetrack {args.command}: {_where(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
