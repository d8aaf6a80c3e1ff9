"""Correlation features for refinement tokens.

Single-point functions mirror the batched ``*_batch`` variants, which are
what the tracker calls. The 4D correlation compares an ``n x n`` patch of
frame-0 features around the query with an ``n x n`` patch of frame-``t``
features around the current estimate. Two reducers consume it: the channel
projection (linear map to ``projected_channels``, layer norm, ReLU) and the
dual-convolution baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .blobs import f32
from .features import FeaturePyramid


@dataclass(frozen=True)
class CorrConfig:
    radius: int = 3
    neighborhood: int = 7
    projected_channels: int = 32
    n_levels: int = 3
    norm_eps: float = 1e-5
    depth_floor: float = 1e-6

    def __post_init__(self):
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ValueError(f"neighborhood must be odd, got {self.neighborhood}")
        if self.projected_channels <= 0 or self.projected_channels % 8:
            raise ValueError(f"projected_channels must be a positive multiple of 8, got {self.projected_channels}")
        if self.radius < 0 or self.n_levels < 1:
            raise ValueError("radius must be >= 0 and n_levels >= 1")

    @property
    def window(self) -> int:
        return (2 * self.radius + 1) ** 2

    @property
    def patch(self) -> int:
        return self.neighborhood ** 2


@dataclass(frozen=True)
class ProjWeights:
    weight: np.ndarray  # (n^2, P)
    bias: np.ndarray  # (P,)
    gain: np.ndarray  # (P,)
    offset: np.ndarray  # (P,)

    def __post_init__(self):
        K, P = self.weight.shape
        for name in ("bias", "gain", "offset"):
            if getattr(self, name).shape != (P,):
                raise ValueError(f"{name} must have shape ({P},)")
        if not all(np.all(np.isfinite(getattr(self, n))) for n in ("weight", "bias", "gain", "offset")):
            raise ValueError("projection weights must be finite")

    @classmethod
    def random(cls, seed: int = 0, cfg: CorrConfig = CorrConfig()):
        rng = np.random.default_rng(seed)
        K, P = cfg.patch, cfg.projected_channels
        return cls(
            f32(rng.normal(0.0, 1.0 / np.sqrt(K), size=(K, P))),
            f32(rng.normal(0.0, 0.02, size=P)),
            f32(1.0 + rng.normal(0.0, 0.05, size=P)),
            f32(rng.normal(0.0, 0.05, size=P)),
        )


@dataclass(frozen=True)
class DualConvKernels:
    first: np.ndarray  # (n^2 out, n^2 in, kh, kw) over query-offset axes
    second: np.ndarray  # (c_out, n^2 in, kh, kw) over target-offset axes

    @classmethod
    def random(cls, seed: int = 0, cfg: CorrConfig = CorrConfig(), out_channels: int = 1, size: int = 3):
        rng = np.random.default_rng(seed)
        K = cfg.patch
        s1 = 1.0 / np.sqrt(K * size * size)
        return cls(
            f32(rng.normal(0.0, s1, size=(K, K, size, size))),
            f32(rng.normal(0.0, s1, size=(out_channels, K, size, size))),
        )

    @property
    def out_dim(self) -> int:
        return self.second.shape[0] * self.first.shape[0]


def multiscale_corr_batch(pyr: FeaturePyramid, t: int, query_feat, pos, cfg: CorrConfig) -> np.ndarray:
    """``(N, n_levels * (2r+1)^2)``; scale-major, row-major in the offset."""
    q = np.ascontiguousarray(query_feat, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    parts = []
    for ell in range(cfg.n_levels):
        p = pos / pyr.stride(ell)
        parts.append(kernels.corr_window(pyr.levels[ell][t], q, p, cfg.radius))
    return np.concatenate(parts, axis=1)


def multiscale_corr(pyr, t, query_feat, pos, cfg: CorrConfig) -> np.ndarray:
    return multiscale_corr_batch(pyr, t, np.asarray(query_feat)[None], np.asarray(pos)[None], cfg)[0]


def corr4d_batch(pyr: FeaturePyramid, t: int, query_pos, cur_pos, cfg: CorrConfig) -> np.ndarray:
    s = pyr.stride(0)
    qp = np.asarray(query_pos, dtype=np.float64) / s
    cp = np.asarray(cur_pos, dtype=np.float64) / s
    return kernels.corr4d(pyr.levels[0][0], pyr.levels[0][t], qp, cp, cfg.neighborhood)


def corr4d(pyr, t, query_pos, cur_pos, cfg: CorrConfig) -> np.ndarray:
    return corr4d_batch(pyr, t, np.asarray(query_pos)[None], np.asarray(cur_pos)[None], cfg)[0]


def project_corr(c, w: ProjWeights, eps: float = 1e-5) -> np.ndarray:
    """Project each query-cell row of ``(..., n^2, n^2)`` to ``(..., n^2, P)``."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != w.weight.shape[0]:
        raise ValueError(f"correlation rows have {c.shape[-1]} entries, projection expects {w.weight.shape[0]}")
    return kernels.project_rows(c, w.weight, w.bias, w.gain, w.offset, eps)


def dual_conv_corr(c, k: DualConvKernels) -> np.ndarray:
    """Flattened ``(c_out, n, n)`` output per correlation, batched over leading axis."""
    c = np.asarray(c, dtype=np.float64)
    single = c.ndim == 2
    if single:
        c = c[None]
    N, a, b = c.shape
    n = int(round(np.sqrt(a)))
    if a != b or n * n != a:
        raise ValueError(f"4D correlation must be n^2 x n^2, got {a}x{b}")
    if k.first.shape[:2] != (a, a) or k.second.shape[1] != a:
        raise ValueError(f"kernel shapes {k.first.shape}, {k.second.shape} do not match n^2={a}")
    for kk in (k.first, k.second):
        if kk.shape[2] % 2 == 0 or kk.shape[3] % 2 == 0:
            raise ValueError(f"kernel spatial size must be odd, got {kk.shape[2:]}")
    out = kernels.dual_conv(c, k.first, k.second)
    return out[0] if single else out


def depth_corr_batch(depth, t: int, query_d, cur_pos, cfg: CorrConfig) -> np.ndarray:
    """Log depth ratio of the query depth against a window of the depth map.

    Offsets are whole pixels around ``cur_pos``; sampling is bilinear and
    border-clamped with a floor of ``cfg.depth_floor``.
    """
    qd = np.asarray(query_d, dtype=np.float64)
    if np.any(~(qd > 0)):
        raise ValueError("query depth must be positive")
    return kernels.depth_window(np.asarray(depth[t]), qd, np.asarray(cur_pos, dtype=np.float64),
                                cfg.radius, cfg.depth_floor)


def depth_corr(depth, t, query_d, cur_pos, cfg: CorrConfig) -> np.ndarray:
    return depth_corr_batch(depth, t, np.asarray([query_d], dtype=np.float64), np.asarray(cur_pos)[None], cfg)[0]
