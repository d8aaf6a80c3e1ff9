"""Shared value types, coordinate conventions and on-disk formats.

Coordinates: ``u`` is the column (width) axis and ``v`` the row (height)
axis, with the origin at the centre of the top-left pixel. Pixel ``(row i,
col j)`` therefore sits at ``(u, v) = (j, i)``. Depth is raw scene depth, and
visibility is a probability in ``[0, 1]`` that metrics binarize at 0.5.

All types are frozen dataclasses whose arrays are read-only copies.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRACK_MAGIC = b"DTRK"
TRACK_VERSION = 1
_HEADER = struct.Struct("<4s5I")
TRACK_HEADER_SIZE = _HEADER.size  # 24 bytes
TRACK_RECORD_SIZE = 4 * 8  # (u, v, d, o) as f64


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Intrinsics:
    f: float
    cu: float
    cv: float

    def __post_init__(self):
        if not (np.isfinite(self.f) and self.f > 0):
            raise ValueError(f"focal length must be positive and finite, got {self.f}")


@dataclass(frozen=True)
class RgbdVideo:
    frames: np.ndarray  # (T, H, W, 3) in [0, 1]
    depth: np.ndarray  # (T, H, W), > 0
    intrinsics: Intrinsics

    def __post_init__(self):
        frames = _frozen(self.frames)
        depth = _frozen(self.depth)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"frames must be T x H x W x 3, got {frames.shape}")
        T, H, W, _ = frames.shape
        if depth.shape != (T, H, W):
            raise ValueError(f"depth shape {depth.shape} does not match frames {frames.shape}")
        if T < 2 or H < 8 or W < 8:
            raise ValueError(f"video too small: T={T}, H={H}, W={W} (need T>=2, H>=8, W>=8)")
        if not np.all(np.isfinite(frames)) or frames.min() < 0 or frames.max() > 1:
            raise ValueError("RGB values must be finite and within [0, 1]")
        if not np.all(np.isfinite(depth)) or depth.min() <= 0:
            raise ValueError("depth values must be finite and strictly positive")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape[:3]


@dataclass(frozen=True)
class TrackState:
    """Dense or subset tracks: ``points[t, i] = (u, v, d, o)``.

    ``grid_shape`` is ``(rows, cols)`` when the trajectories lie on a regular
    grid in row-major order, else ``(N, 1)``.
    """

    points: np.ndarray  # (T, N, 4)
    grid_shape: tuple[int, int]
    origin: np.ndarray = field(default=None)  # (N, 2), first-frame (u, v)

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 3 or pts.shape[-1] != 4:
            raise ValueError(f"points must be T x N x 4, got {pts.shape}")
        N = pts.shape[1]
        origin = pts[0, :, :2] if self.origin is None else self.origin
        origin = _frozen(origin).reshape(N, 2)
        rows, cols = (int(x) for x in self.grid_shape)
        if rows * cols != N:
            raise ValueError(f"grid_shape {rows}x{cols} does not hold {N} trajectories")
        if N:
            if not np.array_equal(pts[0, :, :2], origin):
                raise ValueError("frame-0 positions must equal the trajectory origins")
            if not np.all(pts[0, :, 3] == 1.0):
                raise ValueError("query points must be visible in frame 0")
            d = pts[..., 2]
            if not np.all(np.isfinite(pts[..., :2])) or not np.all(np.isfinite(d)) or d.min() <= 0:
                raise ValueError("track positions must be finite with positive depth")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "grid_shape", (rows, cols))

    @property
    def T(self) -> int:
        return self.points.shape[0]

    @property
    def N(self) -> int:
        return self.points.shape[1]

    def subset(self, ids) -> "TrackState":
        ids = np.asarray(ids, dtype=np.intp)
        return TrackState(self.points[:, ids], (len(ids), 1), self.origin[ids])


@dataclass(frozen=True)
class Schedule:
    factors: tuple[int, ...]

    def __post_init__(self):
        f = tuple(int(x) for x in self.factors)
        if not f:
            raise ValueError("schedule needs at least one factor")
        for x in f:
            if x < 1 or x & (x - 1):
                raise ValueError(f"schedule factor {x} is not a positive power of two")
        if any(a < b for a, b in zip(f, f[1:])):
            raise ValueError(f"schedule must be nonincreasing, got {f}")
        if f[-1] != 1:
            raise ValueError(f"schedule must end with factor 1, got {f}")
        object.__setattr__(self, "factors", f)

    @property
    def K(self) -> int:
        return len(self.factors)

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        return cls(tuple(int(x) for x in text.replace(" ", "").split(",") if x))

    def __str__(self) -> str:
        return ",".join(map(str, self.factors))


@dataclass(frozen=True)
class SampleSet:
    """Tracked/query partition of a ``rows x cols`` grid (flat row-major ids)."""

    tracked_ids: np.ndarray
    query_ids: np.ndarray
    neighbor_map: np.ndarray  # (Q, 4) flat grid ids of tracked cells
    grid_shape: tuple[int, int]

    def __post_init__(self):
        tr = _frozen(self.tracked_ids, np.int64)
        qu = _frozen(self.query_ids, np.int64)
        nb = _frozen(self.neighbor_map, np.int64).reshape(len(qu), 4)
        n = self.grid_shape[0] * self.grid_shape[1]
        if len(np.union1d(tr, qu)) != n or len(tr) + len(qu) != n:
            raise ValueError("tracked and query ids must partition the grid")
        if len(qu):
            if not np.all(np.isin(nb, tr)):
                raise ValueError("neighbor_map may only reference tracked cells")
            s = np.sort(nb, axis=1)
            if np.any(s[:, 1:] == s[:, :-1]):
                raise ValueError("each query needs 4 distinct neighbours")
        object.__setattr__(self, "tracked_ids", tr)
        object.__setattr__(self, "query_ids", qu)
        object.__setattr__(self, "neighbor_map", nb)


def uvd_to_xyz(uvd, intrinsics: Intrinsics) -> np.ndarray:
    """Pinhole back-projection of ``(..., 3)`` ``(u, v, d)`` to camera ``xyz``."""
    uvd = np.asarray(uvd, dtype=np.float64)
    d = uvd[..., 2]
    if np.any(~(d > 0)):
        raise ValueError("depth must be positive for back-projection")
    f = intrinsics.f
    x = (uvd[..., 0] - intrinsics.cu) * d / f
    y = (uvd[..., 1] - intrinsics.cv) * d / f
    return np.stack([x, y, d], axis=-1)


def xyz_to_uvd(xyz, intrinsics: Intrinsics) -> np.ndarray:
    xyz = np.asarray(xyz, dtype=np.float64)
    z = xyz[..., 2]
    u = xyz[..., 0] * intrinsics.f / z + intrinsics.cu
    v = xyz[..., 1] * intrinsics.f / z + intrinsics.cv
    return np.stack([u, v, z], axis=-1)


# -- track files --------------------------------------------------------------


def save_tracks(state: TrackState, path) -> None:
    path = Path(path)
    rows, cols = state.grid_shape
    header = _HEADER.pack(TRACK_MAGIC, TRACK_VERSION, state.T, state.N, rows, cols)
    body = np.ascontiguousarray(state.points, dtype="<f8").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(body)
    except OSError as exc:
        raise OSError(f"cannot write track file {path}: {exc.strerror or exc}") from exc


def load_tracks(path) -> TrackState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read track file {path}: {exc.strerror or exc}") from exc
    if len(raw) < TRACK_HEADER_SIZE:
        raise ValueError(f"{path}: truncated track header")
    magic, version, T, N, rows, cols = _HEADER.unpack_from(raw)
    if magic != TRACK_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != TRACK_VERSION:
        raise ValueError(f"{path}: unsupported track version {version}")
    expected = TRACK_HEADER_SIZE + T * N * TRACK_RECORD_SIZE
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} != expected {expected}")
    pts = np.frombuffer(raw, dtype="<f8", offset=TRACK_HEADER_SIZE).reshape(T, N, 4)
    return TrackState(pts.astype(np.float64), (rows, cols))


# -- video directories ---------------------------------------------------------

VIDEO_MANIFEST = "manifest.json"


def save_video(video: RgbdVideo, directory) -> None:
    """Write per-frame raw little-endian f32 tensors plus a JSON manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    T, H, W = video.shape
    k = video.intrinsics
    manifest = {"T": T, "H": H, "W": W, "f": k.f, "cu": k.cu, "cv": k.cv}
    for t in range(T):
        video.frames[t].astype("<f4").tofile(d / f"frame_{t:04d}_rgb.f32")
        video.depth[t].astype("<f4").tofile(d / f"frame_{t:04d}_depth.f32")
    (d / VIDEO_MANIFEST).write_text(json.dumps(manifest, indent=1))


def load_video(directory) -> RgbdVideo:
    d = Path(directory)
    try:
        m = json.loads((d / VIDEO_MANIFEST).read_text())
    except OSError as exc:
        raise OSError(f"cannot read video manifest in {d}: {exc.strerror or exc}") from exc
    T, H, W = int(m["T"]), int(m["H"]), int(m["W"])
    frames = np.empty((T, H, W, 3))
    depth = np.empty((T, H, W))
    for t in range(T):
        frames[t] = np.fromfile(d / f"frame_{t:04d}_rgb.f32", dtype="<f4").reshape(H, W, 3)
        depth[t] = np.fromfile(d / f"frame_{t:04d}_depth.f32", dtype="<f4").reshape(H, W)
    return RgbdVideo(frames, depth, Intrinsics(float(m["f"]), float(m["cu"]), float(m["cv"])))
