"""Synthetic RGB-D scenes with closed-form dense ground truth.

A scene is a static textured background plane at ``z_max`` plus a few
fronto-parallel textured quads translating with constant 3D velocity. Every
frame-0 pixel belongs to exactly one surface, so its trajectory is the
pinhole projection of a straight 3D path and its visibility is a continuous
z-buffer test at the projected location.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Intrinsics, RgbdVideo, TrackState

OCCLUSION_EPS = 1e-6
_CHECKER_PX = 4.0  # checker cell size in pixels at the surface's frame-0 depth


@dataclass(frozen=True)
class Quad:
    """Axis-aligned planar rectangle parallel to the image plane."""

    center: tuple[float, float, float]  # frame-0 (x, y, z)
    half_size: tuple[float, float]  # (half width, half height), scene units
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # units / frame
    texture_seed: int = 0


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    T: int = 8
    H: int = 64
    W: int = 64
    n_objects: int = 2
    max_velocity: tuple[float, float, float] = (0.06, 0.06, 0.08)
    z_min: float = 3.0
    z_max: float = 8.0
    focal: float | None = None  # defaults to W
    background_seed: int = 0
    objects: tuple[Quad, ...] | None = None  # explicit quads override random ones

    def intrinsics(self) -> Intrinsics:
        f = float(self.W if self.focal is None else self.focal)
        return Intrinsics(f, (self.W - 1) / 2.0, (self.H - 1) / 2.0)

    def validate(self) -> None:
        if self.T < 2 or self.H < 8 or self.W < 8:
            raise ValueError(f"scene too small: T={self.T}, H={self.H}, W={self.W}")
        if not (self.z_min > 0 and self.z_max > self.z_min):
            raise ValueError(f"need 0 < z_min < z_max, got {self.z_min}, {self.z_max}")
        if self.n_objects < 0:
            raise ValueError("n_objects must be nonnegative")
        if any(v < 0 for v in self.max_velocity):
            raise ValueError("velocity bounds must be nonnegative")
        if self.objects is None:
            if self.max_velocity[2] * (self.T - 1) >= self.z_min:
                raise ValueError("z velocity bound lets an object's depth cross zero")
        else:
            for q in self.objects:
                if min(q.half_size) <= 0:
                    raise ValueError(f"quad half sizes must be positive: {q}")
                z_end = q.center[2] + q.velocity[2] * (self.T - 1)
                if q.center[2] <= 0 or z_end <= 0:
                    raise ValueError(f"quad depth leaves z > 0 within T frames: {q}")


@dataclass(frozen=True)
class GroundTruth:
    tracks: TrackState  # H x W grid of frame-0 pixels, row-major
    visible: np.ndarray  # (T, H, W) bool
    owner: np.ndarray  # (H, W) surface index; 0 is the background

    @property
    def shape(self) -> tuple[int, int]:
        return self.tracks.grid_shape

    def lookup(self, origin) -> np.ndarray:
        """Flat GT indices for ``(N, 2)`` integer-pixel origins."""
        origin = np.asarray(origin, dtype=np.float64).reshape(-1, 2)
        H, W = self.shape
        iu = np.rint(origin[:, 0])
        iv = np.rint(origin[:, 1])
        bad = (iu != origin[:, 0]) | (iv != origin[:, 1]) | (iu < 0) | (iv < 0) | (iu >= W) | (iv >= H)
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise LookupError(f"origin {tuple(origin[k])} is not a pixel of the {H}x{W} ground truth")
        return (iv * W + iu).astype(np.intp)


def _random_quads(cfg: SceneConfig, k: Intrinsics, rng: np.random.Generator) -> list[Quad]:
    quads = []
    vb = np.asarray(cfg.max_velocity, dtype=np.float64)
    for _ in range(cfg.n_objects):
        z = rng.uniform(cfg.z_min, cfg.z_min + 0.6 * (cfg.z_max - cfg.z_min))
        u = rng.uniform(0.15 * cfg.W, 0.85 * cfg.W)
        v = rng.uniform(0.15 * cfg.H, 0.85 * cfg.H)
        hw_px = rng.uniform(cfg.W / 8, cfg.W / 4)
        hh_px = rng.uniform(cfg.H / 8, cfg.H / 4)
        vel = rng.uniform(-vb, vb)
        quads.append(
            Quad(
                center=((u - k.cu) * z / k.f, (v - k.cv) * z / k.f, z),
                half_size=(hw_px * z / k.f, hh_px * z / k.f),
                velocity=tuple(vel),
                texture_seed=int(rng.integers(1 << 31)),
            )
        )
    return quads


def opposing_pair(seed: int, T: int = 8, H: int = 64, W: int = 64, speed=(0.03, 0.08)) -> SceneConfig:
    """Two abutting quads at one depth moving with opposite 3D velocities.

    The quads split a central region at a seeded column, so their shared
    edge is a motion discontinuity of twice the per-object speed.
    """
    rng = np.random.default_rng([seed, 7])
    base = SceneConfig(seed=seed, T=T, H=H, W=W)
    k = base.intrinsics()
    z = rng.uniform(3.0, 5.0)
    split = rng.uniform(0.4 * W, 0.6 * W)
    left, right = rng.uniform(0.1 * W, 0.2 * W), rng.uniform(0.8 * W, 0.9 * W)
    top, bottom = rng.uniform(0.1 * H, 0.25 * H), rng.uniform(0.75 * H, 0.9 * H)
    ang = rng.uniform(0, 2 * np.pi)
    sp = rng.uniform(*speed)
    vel = np.array([sp * np.cos(ang), sp * np.sin(ang), rng.uniform(-0.02, 0.02)])

    def quad(u0, u1, v, tex):
        cu, cv = (u0 + u1) / 2, (top + bottom) / 2
        return Quad(((cu - k.cu) * z / k.f, (cv - k.cv) * z / k.f, z),
                    ((u1 - u0) / 2 * z / k.f, (bottom - top) / 2 * z / k.f), tuple(v), tex)

    objs = (quad(left, split, vel, int(rng.integers(1 << 31))), quad(split, right, -vel, int(rng.integers(1 << 31))))
    return SceneConfig(seed=seed, T=T, H=H, W=W, n_objects=2, objects=objs, background_seed=seed)


class _Texture:
    """Checkerboard plus a few seeded sinusoids, in surface-local units."""

    def __init__(self, seed: int, cell: float):
        rng = np.random.default_rng(seed)
        self.cell = cell
        self.base = rng.uniform(0.25, 0.75, size=3)
        self.contrast = rng.uniform(0.15, 0.3, size=3)
        self.freq = rng.uniform(0.3, 1.2, size=(3, 2)) / cell
        self.phase = rng.uniform(0, 2 * np.pi, size=3)
        self.amp = rng.uniform(0.03, 0.08, size=(3, 3))

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        check = (np.floor(a / self.cell) + np.floor(b / self.cell)) % 2 * 2 - 1
        rgb = self.base + self.contrast * check[..., None]
        for m in range(3):
            wave = np.sin(self.freq[m, 0] * a + self.freq[m, 1] * b + self.phase[m])
            rgb = rgb + self.amp[m] * wave[..., None]
        return np.clip(rgb, 0.0, 1.0)


def generate_scene(cfg: SceneConfig) -> tuple[RgbdVideo, GroundTruth]:
    cfg.validate()
    k = cfg.intrinsics()
    rng = np.random.default_rng(cfg.seed)
    quads = list(cfg.objects) if cfg.objects is not None else _random_quads(cfg, k, rng)
    T, H, W = cfg.T, cfg.H, cfg.W

    vv, uu = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    rx = (uu - k.cu) / k.f  # ray slopes: x = rx * z, y = ry * z
    ry = (vv - k.cv) / k.f

    z_bg = float(cfg.z_max)
    bg_tex = _Texture(cfg.background_seed + 7919, _CHECKER_PX * z_bg / k.f)
    textures = [_Texture(q.texture_seed, _CHECKER_PX * q.center[2] / k.f) for q in quads]

    def quad_at(q: Quad, t):
        c = np.asarray(q.center) + np.asarray(q.velocity) * t
        return c

    def covers(q: Quad, t, sx, sy):
        """Depth of quad q along rays (sx, sy) at frame t, inf where missed."""
        cx, cy, cz = quad_at(q, t)
        hit = (np.abs(sx * cz - cx) <= q.half_size[0]) & (np.abs(sy * cz - cy) <= q.half_size[1])
        return np.where(hit, cz, np.inf)

    frames = np.empty((T, H, W, 3))
    depth = np.empty((T, H, W))
    owner0 = None
    for t in range(T):
        zbuf = np.full((H, W), z_bg)
        owner = np.zeros((H, W), dtype=np.int64)
        for s, q in enumerate(quads, start=1):
            zq = covers(q, t, rx, ry)
            win = zq < zbuf
            zbuf = np.where(win, zq, zbuf)
            owner[win] = s
        rgb = bg_tex(rx * z_bg, ry * z_bg)
        for s, q in enumerate(quads, start=1):
            m = owner == s
            if np.any(m):
                cx, cy, cz = quad_at(q, t)
                rgb[m] = textures[s - 1](rx[m] * cz - cx, ry[m] * cz - cy)
        frames[t] = rgb
        depth[t] = zbuf
        if t == 0:
            owner0 = owner

    # ground truth: straight 3D paths of frame-0 surface points
    z0 = depth[0]
    P0 = np.stack([rx * z0, ry * z0, z0], axis=-1)
    vel = np.zeros((len(quads) + 1, 3))
    for s, q in enumerate(quads, start=1):
        vel[s] = q.velocity
    V = vel[owner0]
    pts = np.empty((T, H, W, 4))
    visible = np.empty((T, H, W), dtype=bool)
    for t in range(T):
        P = P0 + V * t
        z = P[..., 2]
        u = P[..., 0] * k.f / z + k.cu
        v = P[..., 1] * k.f / z + k.cv
        if t == 0:
            u, v = uu, vv
        vis = (u >= -0.5) & (u <= W - 0.5) & (v >= -0.5) & (v <= H - 0.5)
        su = (u - k.cu) / k.f
        sv = (v - k.cv) / k.f
        for s, q in enumerate(quads, start=1):
            zq = covers(q, t, su, sv)
            vis &= ~((owner0 != s) & (zq < z - OCCLUSION_EPS))
        if t == 0:
            vis[:] = True
        pts[t] = np.stack([u, v, z, vis.astype(np.float64)], axis=-1)
        visible[t] = vis

    video = RgbdVideo(frames, depth, k)
    gt = GroundTruth(TrackState(pts.reshape(T, H * W, 4), (H, W)), visible, owner0)
    return video, gt


def oracle_refiner(state: TrackState, gt: GroundTruth, step_fraction: float, ids=None) -> TrackState:
    """Move tracked points ``step_fraction`` of the way to ground truth.

    ``ids`` selects the tracked trajectories (all when None); others are
    returned unchanged. Visibility of tracked points is set to GT visibility.
    """
    if not 0.0 < step_fraction <= 1.0:
        raise ValueError(f"step_fraction must be in (0, 1], got {step_fraction}")
    ids = np.arange(state.N) if ids is None else np.asarray(ids, dtype=np.intp)
    pts = np.array(state.points)
    if len(ids):
        g = gt.tracks.points[:, gt.lookup(state.origin[ids])]
        cur = pts[:, ids]
        cur[..., :3] = (1.0 - step_fraction) * cur[..., :3] + step_fraction * g[..., :3]
        cur[..., 3] = g[..., 3]
        pts[:, ids] = cur
    return TrackState(pts, state.grid_shape, state.origin)
