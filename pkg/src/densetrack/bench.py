"""Timing harnesses behind the ``profile`` and ``bench-schedules`` commands."""

from __future__ import annotations

import time

import numpy as np

from .core import RgbdVideo
from .correlation import CorrConfig, DualConvKernels, ProjWeights, dual_conv_corr, project_corr
from .metrics import epe
from .profiling import Profiler, StageTiming
from .synth import GroundTruth
from .tracker import EngineConfig, EngineWeights, run_tracking


def profile_run(video: RgbdVideo, cfg: EngineConfig, weights: EngineWeights | None = None,
                gt: GroundTruth | None = None, warmup: bool = True) -> list[StageTiming]:
    """Stage timings of one tracking run; an identical warm-up run is discarded first."""
    if weights is None:
        weights = EngineWeights.random(cfg)
    if warmup:
        run_tracking(video, cfg, weights, gt=gt, keep_states=False)
    prof = Profiler()
    run_tracking(video, cfg, weights, gt=gt, profiler=prof, keep_states=False)
    return prof.summary()


def compare_corr_paths(n_points: int, trials: int = 10, seed: int = 0,
                       cfg: CorrConfig = CorrConfig()) -> list[tuple[float, float]]:
    """Wall time (ms) of the projection and dual-conv reducers on one 4D-corr batch, per trial."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, size=(n_points, cfg.patch, cfg.patch))
    pw = ProjWeights.random(seed, cfg)
    dk = DualConvKernels.random(seed, cfg)
    project_corr(c[:8], pw, cfg.norm_eps)
    dual_conv_corr(c[:8], dk)
    out = []
    for _ in range(trials):
        t0 = time.perf_counter()
        project_corr(c, pw, cfg.norm_eps).mean(axis=1)
        t1 = time.perf_counter()
        dual_conv_corr(c, dk)
        t2 = time.perf_counter()
        out.append(((t1 - t0) * 1e3, (t2 - t1) * 1e3))
    return out


def bench_schedules(video: RgbdVideo, schedules, base: EngineConfig, weights: EngineWeights | None = None,
                    gt: GroundTruth | None = None) -> list[dict]:
    rows = []
    for sch in schedules:
        cfg = EngineConfig(**{**base.__dict__, "schedule": sch})
        w = weights if weights is not None else EngineWeights.random(cfg)
        t0 = time.perf_counter()
        res = run_tracking(video, cfg, w, gt=gt, keep_states=False)
        ms = (time.perf_counter() - t0) * 1e3
        e = epe(res.tracks, gt.tracks) if gt is not None else (None, None, None)
        rows.append({"schedule": str(cfg.schedule), "tokens": res.total_tokens, "wall_ms": ms,
                     "epe_all": e[0], "epe_vis": e[1], "epe_occ": e[2]})
    return rows
