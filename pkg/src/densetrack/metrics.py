"""Tracking metrics.

Track arguments are :class:`TrackState` objects or raw ``(T, N, 4)`` arrays of
``(u, v, d, o)``. The first frame holds the query points themselves, so the
trajectory metrics skip it. Ground-truth visibility is ``o >= 0.5``, and so
is predicted visibility.
"""

from __future__ import annotations

import numpy as np

from .core import Intrinsics, TrackState, uvd_to_xyz

DEFAULT_THRESHOLDS = (0.01, 0.02, 0.04, 0.08, 0.16)


def _points(x) -> np.ndarray:
    p = x.points if isinstance(x, TrackState) else np.asarray(x, dtype=np.float64)
    if p.ndim != 3 or p.shape[-1] != 4:
        raise ValueError(f"tracks must be T x N x 4, got {p.shape}")
    return p


def _pair(pred, gt):
    p, g = _points(pred), _points(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return p[1:], g[1:]


def _mean(x):
    return float(x.mean()) if x.size else None


def epe(pred, gt) -> tuple[float | None, float | None, float | None]:
    """Mean 2D end-point error over (all, gt-visible, gt-occluded) point-frames.

    An empty split is reported as ``None``.
    """
    p, g = _pair(pred, gt)
    err = np.linalg.norm(p[..., :2] - g[..., :2], axis=-1)
    vis = g[..., 3] >= 0.5
    return _mean(err), _mean(err[vis]), _mean(err[~vis])


def visibility_iou(pred_vis, gt_vis) -> float:
    """IoU of the occlusion masks (``pred_vis < 0.5`` against ``gt_vis < 0.5``).

    Takes visibility arrays of any matching shape. An empty union scores 1.
    """
    p = np.asarray(pred_vis, dtype=np.float64)
    g = np.asarray(gt_vis, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    po, go = p < 0.5, g < 0.5
    union = np.count_nonzero(po | go)
    return 1.0 if union == 0 else np.count_nonzero(po & go) / union


def occlusion_accuracy(pred_vis, gt_vis) -> float:
    p = np.asarray(pred_vis, dtype=np.float64)
    g = np.asarray(gt_vis, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    if p.size == 0:
        return 1.0
    return np.count_nonzero((p >= 0.5) == (g >= 0.5)) / p.size


def _dist3d(p, g, k: Intrinsics):
    return np.linalg.norm(uvd_to_xyz(p[..., :3], k) - uvd_to_xyz(g[..., :3], k), axis=-1)


def apd3d(pred, gt, intrinsics: Intrinsics, thresholds=DEFAULT_THRESHOLDS) -> tuple[float | None, float | None]:
    """Fraction of point-frames within ``delta * d_gt`` in 3D, averaged over thresholds.

    Returns ``(all, gt-visible)``; an empty split is ``None``.
    """
    p, g = _pair(pred, gt)
    dist = _dist3d(p, g, intrinsics)
    vis = g[..., 3] >= 0.5
    out = []
    for mask in (np.ones_like(vis), vis):
        if not mask.any():
            out.append(None)
            continue
        hits = [np.count_nonzero(dist[mask] < th * g[..., 2][mask]) / np.count_nonzero(mask) for th in thresholds]
        out.append(float(np.mean(hits)))
    return out[0], out[1]


def average_jaccard(pred, gt, intrinsics: Intrinsics, thresholds=DEFAULT_THRESHOLDS) -> tuple[float, float]:
    """Average Jaccard over thresholds; returns ``(all, gt-visible)``.

    The visible split restricts the point-frames to those visible in ground
    truth, which removes the occlusion false positives.
    """
    p, g = _pair(pred, gt)
    dist = _dist3d(p, g, intrinsics)
    gv = g[..., 3] >= 0.5
    pv = p[..., 3] >= 0.5
    out = []
    for mask in (np.ones_like(gv), gv):
        scores = []
        for th in thresholds:
            near = dist < th * g[..., 2]
            tp = np.count_nonzero(mask & gv & pv & near)
            fp = np.count_nonzero(mask & pv & (~gv | ~near))
            fn = np.count_nonzero(mask & gv & (~pv | ~near))
            den = tp + fp + fn
            scores.append(1.0 if den == 0 else tp / den)
        out.append(float(np.mean(scores)))
    return out[0], out[1]


def evaluate(pred, gt, intrinsics: Intrinsics, thresholds=DEFAULT_THRESHOLDS) -> list[tuple[str, str, float | None]]:
    """All metrics as ``(metric, split, value)`` rows."""
    p, g = _points(pred), _points(gt)
    e = epe(p, g)
    a = apd3d(p, g, intrinsics, thresholds)
    j = average_jaccard(p, g, intrinsics, thresholds)
    return [
        ("epe", "all", e[0]), ("epe", "vis", e[1]), ("epe", "occ", e[2]),
        ("apd3d", "all", a[0]), ("apd3d", "vis", a[1]),
        ("aj", "all", j[0]), ("aj", "vis", j[1]),
        ("oa", "all", occlusion_accuracy(p[1:, :, 3], g[1:, :, 3])),
        ("iou", "occ", visibility_iou(p[1:, :, 3], g[1:, :, 3])),
    ]
