"""Cost-reduction strategy comparison with the oracle refiner.

Every strategy spends one refinement step on a reduced problem and then
recovers dense full-resolution tracks:

* ``spatial``: downsample the input by ``f``; a low-res pixel carries the
  block-averaged trajectory of the pixels it covers. Motion is bilinearly
  upsampled from block centres.
* ``temporal``: refine every ``f``-th frame and linearly interpolate the
  skipped frames, extending the last segment past the final kept frame.
* ``trajectory-bilinear`` / ``trajectory-nearest``: refine one pixel in
  ``F`` (a stride ``sqrt(F)`` grid) and interpolate the rest.

``tokens`` counts refined point-frames, so cost scales as ``1/f^2``, ``1/f``
and ``1/F`` respectively.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import RgbdVideo
from .interp import interp_bilinear, interp_nearest
from .metrics import apd3d, epe
from .synth import GroundTruth
from .tracker import sample_points

DEFAULT_STRATEGIES = (
    ("baseline", 1),
    ("spatial", 2), ("spatial", 4), ("spatial", 8),
    ("temporal", 2), ("temporal", 4), ("temporal", 8),
    ("trajectory-bilinear", 4), ("trajectory-bilinear", 16), ("trajectory-bilinear", 64),
    ("trajectory-nearest", 4), ("trajectory-nearest", 16), ("trajectory-nearest", 64),
)


@dataclass
class StrategyRow:
    strategy: str
    factor: int
    epe: float | None
    apd3d: float | None
    wall_ms: float
    tokens: int
    note: str = ""


def _initial(gt_pts):
    init = np.repeat(gt_pts[:1], gt_pts.shape[0], axis=0)
    init[..., 3] = 1.0
    return init


def _refine(cur, target, step):
    out = cur.copy()
    out[..., :3] = (1.0 - step) * cur[..., :3] + step * target[..., :3]
    out[..., 3] = target[..., 3]
    return out


def _finish(pts, gt_pts):
    pts[..., 2] = np.maximum(pts[..., 2], 1e-6)
    pts[0] = gt_pts[0]
    return pts


def _spatial(gt_pts, H, W, f, step):
    T = gt_pts.shape[0]
    g = gt_pts.reshape(T, H // f, f, W // f, f, 4)
    d0 = gt_pts[0, :, 2]
    motion = g - g[0:1]  # (u, v, d) relative to frame 0; o is absolute
    motion[..., 3] = g[..., 3]
    low = motion.mean(axis=(2, 4))  # (T, h, w, 4)
    low = _refine(np.concatenate([np.zeros_like(low[..., :3]), np.ones_like(low[..., 3:])], axis=-1), low, step)
    c = (f - 1) / 2.0
    vv, uu = np.divmod(np.arange(H * W), W)
    q = np.stack([uu, vv], axis=1).astype(np.float64)
    m = interp_bilinear(low, (c, c), f, q)
    out = np.empty_like(gt_pts)
    out[..., :2] = q[None] + m[..., :2]
    out[..., 2] = d0[None] + m[..., 2]
    out[..., 3] = m[..., 3]
    return out, T * (H // f) * (W // f)


def _temporal(gt_pts, f, step):
    T = gt_pts.shape[0]
    kept = list(range(0, T, f))
    ref = _refine(_initial(gt_pts)[kept], gt_pts[kept], step)
    t = np.arange(T)
    out = np.empty_like(gt_pts)
    hi = np.clip(np.searchsorted(kept, t), 1, len(kept) - 1)
    lo = hi - 1
    k = np.asarray(kept, dtype=np.float64)
    w = ((t - k[lo]) / (k[hi] - k[lo]))[:, None, None]
    out[:] = (1.0 - w) * ref[lo] + w * ref[hi]
    return out, len(kept) * gt_pts.shape[1]


def _trajectory(gt_pts, H, W, F, step, kind):
    st = math.isqrt(F)
    T = gt_pts.shape[0]
    ss = sample_points((H, W), st, "uniform")
    tr, qi = ss.tracked_ids, ss.query_ids
    out = _initial(gt_pts)
    out[:, tr] = _refine(out[:, tr], gt_pts[:, tr], step)
    motion = out - out[0:1]
    motion[..., 3] = out[..., 3]
    vv, uu = np.divmod(np.arange(H * W), W)
    pos = np.stack([uu, vv], axis=1).astype(np.float64)
    if len(qi):
        if kind == "bilinear":
            p = st // 2
            nodes = motion[:, tr].reshape(T, len(range(p, H, st)), len(range(p, W, st)), 4)
            m = interp_bilinear(nodes, (p, p), st, pos[qi])
        else:
            m = interp_nearest(pos, motion, pos[qi], ss.neighbor_map)
        out[:, qi, :3] = out[0:1, qi, :3] + m[..., :3]
        out[:, qi, 3] = m[..., 3]
    return out, T * len(tr)


def _check(strategy, f, T, H, W):
    if f < 1:
        return f"factor {f} must be >= 1"
    if strategy == "spatial" and (H % f or W % f):
        return f"factor {f} does not divide {H}x{W}"
    if strategy == "temporal" and f > 1 and len(range(0, T, f)) < 2:
        return f"factor {f} keeps fewer than 2 of {T} frames"
    if strategy.startswith("trajectory"):
        st = math.isqrt(f)
        if st * st != f:
            return f"factor {f} is not a square"
        if H % st or W % st:
            return f"stride {st} does not divide {H}x{W}"
    return ""


def run_strategy(gt: GroundTruth, strategy: str, factor: int, step: float = 1.0) -> tuple[np.ndarray, int]:
    """Dense ``(T, H*W, 4)`` tracks and refined point-frame count for one strategy."""
    H, W = gt.shape
    g = np.asarray(gt.tracks.points)
    T = g.shape[0]
    reason = _check(strategy, factor, T, H, W)
    if reason:
        raise ValueError(reason)
    if strategy == "baseline" or factor == 1:
        out, tokens = _refine(_initial(g), g, step), T * H * W
    elif strategy == "spatial":
        out, tokens = _spatial(g, H, W, factor, step)
    elif strategy == "temporal":
        out, tokens = _temporal(g, factor, step)
    elif strategy in ("trajectory-bilinear", "trajectory-nearest"):
        out, tokens = _trajectory(g, H, W, factor, step, strategy.split("-")[1])
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return _finish(out, g), tokens


def strategy_compare(video: RgbdVideo, gt: GroundTruth, strategies=DEFAULT_STRATEGIES,
                     step: float = 1.0) -> list[StrategyRow]:
    T, H, W = video.shape
    rows = []
    for name, f in strategies:
        reason = _check(name, f, T, H, W)
        if reason:
            rows.append(StrategyRow(name, f, None, None, 0.0, 0, f"skipped: {reason}"))
            continue
        t0 = time.perf_counter()
        pred, tokens = run_strategy(gt, name, f, step)
        ms = (time.perf_counter() - t0) * 1e3
        rows.append(StrategyRow(name, f, epe(pred, gt.tracks)[0], apd3d(pred, gt.tracks, video.intrinsics)[0],
                                ms, tokens))
    return rows
