"""Seeded multi-scale feature pyramids.

Level 0 is a stride-``r`` patch embedding of the RGB frames followed by a
ReLU; level ``l+1`` is a 2x average pool of level ``l`` smoothed by a 3x3
kernel. Every feature vector is L2-normalized, so dot products lie in
``[-1, 1]``. Cell ``(i, j)`` of level ``l`` sits at full-resolution pixel
``(u, v) = (j, i) * r * 2**l``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .blobs import f32, read_blobs, write_blobs
from .core import RgbdVideo

DEFAULT_C = 32
DEFAULT_R = 4
DEFAULT_LEVELS = 3


@dataclass(frozen=True)
class ExtractorWeights:
    proj: np.ndarray  # (3 * r * r, C), rows ordered (dy, dx, rgb)
    bias: np.ndarray  # (C,)
    smooth: np.ndarray  # (n_levels - 1, 3, 3), each sums to 1
    r: int
    seed: int | None = None

    def __post_init__(self):
        C = self.proj.shape[1]
        if self.proj.shape != (3 * self.r * self.r, C) or self.bias.shape != (C,):
            raise ValueError(f"patch projection shape {self.proj.shape} inconsistent with r={self.r}")
        if self.smooth.ndim != 3 or self.smooth.shape[1:] != (3, 3):
            raise ValueError(f"smoothing kernels must be (L-1, 3, 3), got {self.smooth.shape}")
        for a in (self.proj, self.bias, self.smooth):
            if not np.all(np.isfinite(a)):
                raise ValueError("extractor weights must be finite")

    @property
    def C(self) -> int:
        return self.proj.shape[1]

    @property
    def n_levels(self) -> int:
        return self.smooth.shape[0] + 1

    @classmethod
    def random(cls, seed: int = 0, C: int = DEFAULT_C, r: int = DEFAULT_R, n_levels: int = DEFAULT_LEVELS):
        rng = np.random.default_rng(seed)
        fan_in = 3 * r * r
        proj = f32(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, C)))
        bias = f32(rng.normal(0.0, 0.05, size=C))
        binom = np.outer([1, 2, 1], [1, 2, 1]) / 16.0
        k = binom[None] + rng.uniform(0.0, 0.05, size=(n_levels - 1, 3, 3))
        k = f32(k / k.sum(axis=(1, 2), keepdims=True))
        return cls(proj, bias, k, r, seed)

    def blobs(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + "proj": self.proj, prefix + "bias": self.bias, prefix + "smooth": self.smooth}

    def save(self, path) -> None:
        meta = {"C": self.C, "r": self.r, "seed": self.seed, "n_levels": self.n_levels}
        write_blobs(path, meta, self.blobs())

    @classmethod
    def load(cls, path) -> "ExtractorWeights":
        meta, b = read_blobs(path)
        return cls(b["proj"], b["bias"], b["smooth"], int(meta["r"]), meta.get("seed"))


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple[np.ndarray, ...]  # level l: (T, H / (r 2^l), W / (r 2^l), C)
    r: int

    @property
    def C(self) -> int:
        return self.levels[0].shape[-1]

    @property
    def T(self) -> int:
        return self.levels[0].shape[0]

    def stride(self, level: int) -> int:
        return self.r * 2 ** level


def _normalize(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    C = x.shape[-1]
    # all-zero vectors (every ReLU channel dead) fall back to the uniform direction
    return np.where(n > 1e-12, x / np.where(n > 1e-12, n, 1.0), 1.0 / np.sqrt(C))


def _smooth3x3(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # depthwise, edge-replicated; x: (T, h, w, C)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = x.shape[1:3]
    out = np.zeros_like(x)
    for a in range(3):
        for b in range(3):
            out += k[a, b] * xp[:, a:a + h, b:b + w]
    return out


def extract_features(video, weights: ExtractorWeights, n_levels: int = DEFAULT_LEVELS) -> FeaturePyramid:
    """Build the pyramid for an :class:`RgbdVideo` or a raw ``(T, H, W, 3)`` array."""
    frames = video.frames if isinstance(video, RgbdVideo) else np.asarray(video, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise ValueError(f"frames must be T x H x W x 3, got {frames.shape}")
    if not 1 <= n_levels <= weights.n_levels:
        raise ValueError(f"n_levels={n_levels} outside 1..{weights.n_levels} supported by weights")
    T, H, W, _ = frames.shape
    r = weights.r
    unit = r * 2 ** (n_levels - 1)
    for name, size in (("H", H), ("W", W)):
        if size % unit:
            raise ValueError(f"{name}={size} is not divisible by r*2^(n_levels-1)={unit}")
    h, w = H // r, W // r
    patches = (frames - 0.5).reshape(T, h, r, w, r, 3).transpose(0, 1, 3, 2, 4, 5)
    lvl = patches.reshape(T, h, w, 3 * r * r) @ weights.proj + weights.bias
    lvl = _normalize(np.maximum(lvl, 0.0))
    levels = [lvl]
    for ell in range(1, n_levels):
        t_, hh, ww, C = lvl.shape
        pooled = lvl.reshape(t_, hh // 2, 2, ww // 2, 2, C).mean(axis=(2, 4))
        lvl = _normalize(_smooth3x3(pooled, weights.smooth[ell - 1]))
        levels.append(lvl)
    for a in levels:
        a.setflags(write=False)
    return FeaturePyramid(tuple(levels), r)


def sample_features(pyr: FeaturePyramid, t: int, level: int, pos) -> np.ndarray:
    """Bilinear lookup at full-resolution ``(N, 2)`` positions, border-clamped."""
    if not 0 <= level < len(pyr.levels):
        raise IndexError(f"level {level} out of range")
    if not 0 <= t < pyr.T:
        raise IndexError(f"frame {t} out of range")
    p = np.asarray(pos, dtype=np.float64).reshape(-1, 2) / pyr.stride(level)
    return kernels.bilinear_sample(pyr.levels[level][t], p)


def sample_feature(pyr: FeaturePyramid, t: int, level: int, pos) -> np.ndarray:
    return sample_features(pyr, t, level, np.asarray(pos, dtype=np.float64)[None])[0]
