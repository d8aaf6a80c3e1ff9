"""Coarse-to-fine dense tracking engine.

The engine tracks the ``(H/r) x (W/r)`` grid whose cell ``(row, col)``
starts at pixel ``(u, v) = (col * r, row * r)``. Iteration ``k`` refines a
nested stride-``s_k`` subset of that grid once, then fills every untracked
cell by interpolating motion from its 4 tracked neighbours. Subgrids share
the phase ``s_1 // 2`` so each one contains the previous, which keeps
refined points tracked and makes the per-iteration token count exactly
``T * (rows / s_k) * (cols / s_k)``. After the last iteration (``s_K = 1``)
the grid is upsampled to every pixel with the same interpolator.

Token layout (width ``D_raw`` before the input projection), per point/frame::

    [ feature (C) | multiscale corr (levels * (2R+1)^2) | 4D corr (P or conv) |
      depth corr ((2R+1)^2) | visibility (1) | gamma(x_t - x_1) (6 * n_freq) ]

projected to ``d_tok`` and summed with projected ``gamma_pos(x_t)`` and
``gamma_time(t)``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels
from .blobs import f32, read_blobs, write_blobs
from .core import RgbdVideo, SampleSet, Schedule, TrackState
from .correlation import (
    CorrConfig,
    DualConvKernels,
    ProjWeights,
    corr4d_batch,
    depth_corr_batch,
    dual_conv_corr,
    multiscale_corr_batch,
    project_corr,
)
from .features import ExtractorWeights, FeaturePyramid, extract_features, sample_features
from .interp import AttnInterpParams, interp_bilinear, interp_learnable, interp_learnable_points, interp_nearest
from .phi import PhiWeights, phi_forward, spatial_context
from .profiling import NullProfiler, Profiler
from .synth import GroundTruth, oracle_refiner

SAMPLINGS = ("uniform", "random", "keypoint")
INTERPOLATORS = ("nearest", "bilinear", "learnable")
REFINERS = ("transformer", "oracle")
_VIS_CLIP = 1e-4
_DEPTH_FLOOR = 1e-6


# -- embeddings and tokens --------------------------------------------------------


def positional_embed(x, n_freq: int) -> np.ndarray:
    """Sinusoidal embedding with octave frequencies ``2**m``, ``m < n_freq``.

    ``(..., c)`` -> ``(..., 2 * n_freq * c)``, laid out component-major then
    frequency, each as ``(sin, cos)``. A scalar is treated as one component.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x[None]
    w = 2.0 ** np.arange(n_freq)
    ang = x[..., :, None] * w  # (..., c, n_freq)
    out = np.stack([np.sin(ang), np.cos(ang)], axis=-1)
    return out.reshape(x.shape[:-1] + (-1,))


@dataclass(frozen=True)
class TokenWeights:
    w_in: np.ndarray  # (D_raw, D)
    b_in: np.ndarray  # (D,)
    w_pos: np.ndarray  # (6 * n_freq, D)
    w_time: np.ndarray  # (2 * n_freq, D)

    @classmethod
    def random(cls, seed: int, d_raw: int, d_tok: int, n_freq: int) -> "TokenWeights":
        rng = np.random.default_rng(seed)
        return cls(
            f32(rng.normal(0, 1.0 / np.sqrt(d_raw), (d_raw, d_tok))),
            f32(rng.normal(0, 0.02, d_tok)),
            f32(rng.normal(0, 1.0 / np.sqrt(6 * n_freq), (6 * n_freq, d_tok))),
            f32(rng.normal(0, 1.0 / np.sqrt(2 * n_freq), (2 * n_freq, d_tok))),
        )


# -- configuration and weights -----------------------------------------------------


@dataclass(frozen=True)
class EngineConfig:
    schedule: Schedule = field(default_factory=lambda: Schedule((8, 4, 2, 1)))
    sampling: str = "uniform"
    sampling_seed: int = 0
    interpolator: str = "learnable"
    refiner: str = "transformer"
    step_fraction: float = 1.0
    r: int = 4
    corr: CorrConfig = field(default_factory=CorrConfig)
    corr_mode: str = "project"  # or "dualconv"
    feature_channels: int = 32
    n_freq: int = 4
    d_tok: int = 128
    n_layers: int = 3
    n_heads: int = 4
    anchor_stride: int = 4
    window: int = 7

    def __post_init__(self):
        if isinstance(self.schedule, (tuple, list)):
            object.__setattr__(self, "schedule", Schedule(tuple(self.schedule)))
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}, got {self.sampling!r}")
        if self.interpolator not in INTERPOLATORS:
            raise ValueError(f"interpolator must be one of {INTERPOLATORS}, got {self.interpolator!r}")
        if self.refiner not in REFINERS:
            raise ValueError(f"refiner must be one of {REFINERS}, got {self.refiner!r}")
        if self.corr_mode not in ("project", "dualconv"):
            raise ValueError(f"corr_mode must be 'project' or 'dualconv', got {self.corr_mode!r}")
        if self.interpolator == "bilinear" and self.sampling != "uniform":
            raise ValueError("bilinear interpolation needs a regular subgrid (uniform sampling)")
        if not 0.0 < self.step_fraction <= 1.0:
            raise ValueError(f"step_fraction must be in (0, 1], got {self.step_fraction}")
        if self.r < 1:
            raise ValueError("r must be positive")

    @property
    def K(self) -> int:
        return self.schedule.K

    def token_dims(self, corr_out: int) -> dict[str, int]:
        c = self.corr
        return {
            "feature": self.feature_channels,
            "corr_multiscale": c.n_levels * c.window,
            "corr_4d": corr_out,
            "depth_corr": c.window,
            "visibility": 1,
            "displacement": 6 * self.n_freq,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = list(self.schedule.factors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        d["schedule"] = Schedule(tuple(d["schedule"]))
        d["corr"] = CorrConfig(**d["corr"])
        return cls(**d)


@dataclass(frozen=True)
class EngineWeights:
    extractor: ExtractorWeights
    proj: ProjWeights
    dualconv: DualConvKernels
    interp: AttnInterpParams
    tokens: TokenWeights
    phi: PhiWeights
    seed: int | None = None

    @classmethod
    def random(cls, cfg: EngineConfig, seed: int = 0) -> "EngineWeights":
        ss = np.random.SeedSequence(seed).generate_state(6)
        ex = ExtractorWeights.random(int(ss[0]), C=cfg.feature_channels, r=cfg.r, n_levels=cfg.corr.n_levels)
        proj = ProjWeights.random(int(ss[1]), cfg.corr)
        dc = DualConvKernels.random(int(ss[2]), cfg.corr)
        interp = AttnInterpParams.random(int(ss[3]), C=cfg.feature_channels)
        corr_out = cfg.corr.projected_channels if cfg.corr_mode == "project" else dc.out_dim
        d_raw = sum(cfg.token_dims(corr_out).values())
        tok = TokenWeights.random(int(ss[4]), d_raw, cfg.d_tok, cfg.n_freq)
        phi = PhiWeights.random(int(ss[5]), D=cfg.d_tok, n_layers=cfg.n_layers, n_heads=cfg.n_heads,
                                anchor_stride=cfg.anchor_stride, window=cfg.window)
        return cls(ex, proj, dc, interp, tok, phi, seed)

    def check(self, cfg: EngineConfig) -> None:
        """Raise at startup if the weights cannot serve ``cfg``."""
        ex = self.extractor
        if ex.r != cfg.r or ex.C != cfg.feature_channels or ex.n_levels < cfg.corr.n_levels:
            raise ValueError("extractor weights do not match r / feature_channels / levels of the config")
        if self.proj.weight.shape != (cfg.corr.patch, cfg.corr.projected_channels):
            raise ValueError(f"projection weights {self.proj.weight.shape} do not match the correlation config")
        if self.interp.C != cfg.feature_channels:
            raise ValueError("interpolator feature width differs from feature_channels")
        corr_out = cfg.corr.projected_channels if cfg.corr_mode == "project" else self.dualconv.out_dim
        d_raw = sum(cfg.token_dims(corr_out).values())
        if self.tokens.w_in.shape != (d_raw, cfg.d_tok):
            raise ValueError(
                f"token budget mismatch: layout needs {d_raw} -> {cfg.d_tok}, "
                f"input projection is {self.tokens.w_in.shape}"
            )
        if self.tokens.w_pos.shape[0] != 6 * cfg.n_freq or self.tokens.w_time.shape[0] != 2 * cfg.n_freq:
            raise ValueError("positional projection sizes do not match n_freq")
        if self.phi.D != cfg.d_tok:
            raise ValueError(f"transformer width {self.phi.D} != d_tok {cfg.d_tok}")

    def blobs(self) -> dict[str, np.ndarray]:
        b = self.extractor.blobs("extractor.")
        b.update({"proj.weight": self.proj.weight, "proj.bias": self.proj.bias,
                  "proj.gain": self.proj.gain, "proj.offset": self.proj.offset,
                  "dualconv.first": self.dualconv.first, "dualconv.second": self.dualconv.second})
        b.update({"interp." + k: v for k, v in self.interp.arrays().items()})
        b.update({"tokens." + k: getattr(self.tokens, k) for k in ("w_in", "b_in", "w_pos", "w_time")})
        b.update({"phi." + k: v for k, v in self.phi.arrays().items()})
        return b

    def save(self, path, cfg: EngineConfig) -> None:
        meta = {"config": cfg.to_dict(), "seed": self.seed, "phi": self.phi.meta(), "r": self.extractor.r}
        write_blobs(path, meta, self.blobs())

    @classmethod
    def load(cls, path) -> tuple["EngineWeights", EngineConfig]:
        meta, b = read_blobs(path)

        def group(prefix):
            return {k[len(prefix):]: v for k, v in b.items() if k.startswith(prefix)}

        ex = group("extractor.")
        pj = group("proj.")
        dc = group("dualconv.")
        tk = group("tokens.")
        w = cls(
            ExtractorWeights(ex["proj"], ex["bias"], ex["smooth"], int(meta["r"]), meta.get("seed")),
            ProjWeights(pj["weight"], pj["bias"], pj["gain"], pj["offset"]),
            DualConvKernels(dc["first"], dc["second"]),
            AttnInterpParams.from_arrays(group("interp.")),
            TokenWeights(tk["w_in"], tk["b_in"], tk["w_pos"], tk["w_time"]),
            PhiWeights.from_arrays(group("phi."), meta["phi"]),
            meta.get("seed"),
        )
        return w, EngineConfig.from_dict(meta["config"])


# -- token assembly -----------------------------------------------------------------


def assemble_tokens(points, origin, pyr: FeaturePyramid, depth, cfg: EngineConfig, weights: EngineWeights,
                    profiler: Profiler | None = None, iteration: int = 0) -> np.ndarray:
    """Tokens ``(T, N, d_tok)`` for tracked states ``points (T, N, 4)``."""
    prof = profiler or NullProfiler()
    pts = np.asarray(points, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    T, N, _ = pts.shape
    tw = weights.tokens
    with prof.stage("token_assembly", units=T * N, iteration=iteration):
        qfeat = sample_features(pyr, 0, 0, origin)
        x1 = pts[0, :, :3]
        out = np.empty((T, N, tw.w_in.shape[1]))
        for t in range(T):
            pos = np.ascontiguousarray(pts[t, :, :2])
            feat = sample_features(pyr, t, 0, pos)
            with prof.stage("corr_multiscale", units=N, iteration=iteration):
                cms = multiscale_corr_batch(pyr, t, qfeat, pos, cfg.corr)
            with prof.stage("corr_4d", units=N, iteration=iteration):
                c4 = corr4d_batch(pyr, t, origin, pos, cfg.corr)
            with prof.stage("corr_project", units=N, iteration=iteration):
                if cfg.corr_mode == "project":
                    c4f = project_corr(c4, weights.proj, cfg.corr.norm_eps).mean(axis=1)
                else:
                    c4f = dual_conv_corr(c4, weights.dualconv)
            dcorr = depth_corr_batch(depth, t, pts[t, :, 2], pos, cfg.corr)
            disp = positional_embed(pts[t, :, :3] - x1, cfg.n_freq)
            raw = np.concatenate([feat, cms, c4f, dcorr, pts[t, :, 3:4], disp], axis=1)
            if raw.shape[1] != tw.w_in.shape[0]:
                raise ValueError(f"token layout width {raw.shape[1]} != input projection {tw.w_in.shape[0]}")
            out[t] = (raw @ tw.w_in + tw.b_in
                      + positional_embed(pts[t, :, :3], cfg.n_freq) @ tw.w_pos
                      + positional_embed(float(t), cfg.n_freq) @ tw.w_time)
    return out


# -- sampling -----------------------------------------------------------------------


def keypoint_scores(frame, r: int) -> np.ndarray:
    """Mean image-gradient magnitude per ``r x r`` cell (a SIFT-like saliency)."""
    g = np.asarray(frame, dtype=np.float64).mean(axis=-1)
    gy, gx = np.gradient(g)
    mag = np.hypot(gx, gy)
    H, W = mag.shape
    return mag[: H // r * r, : W // r * r].reshape(H // r, r, W // r, r).mean(axis=(1, 3))


def sample_points(grid_shape, s: int, strategy: str = "uniform", seed: int = 0, keep=None,
                  phase: int | None = None, scores=None) -> SampleSet:
    """Choose tracked cells at subsampling factor ``s`` and map queries to 4 neighbours.

    ``keep`` lists grid ids that stay tracked (earlier iterations); the
    random and keypoint strategies top them up to
    ``ceil(rows/s) * ceil(cols/s)`` cells. Uniform sampling takes the stride-``s``
    subgrid at ``phase`` (default ``s // 2``) in both axes.
    """
    rows, cols = (int(x) for x in grid_shape)
    n = rows * cols
    keep = np.zeros(0, dtype=np.int64) if keep is None else np.asarray(keep, dtype=np.int64)
    count = -(-rows // s) * -(-cols // s)
    if count > n or len(keep) > count:
        raise ValueError(f"cannot track {max(count, len(keep))} cells on a {rows}x{cols} grid at factor {s}")
    if strategy == "uniform":
        if rows % s or cols % s:
            raise ValueError(f"factor {s} does not divide the {rows}x{cols} grid")
        p = s // 2 if phase is None else phase % s
        rr, cc = np.meshgrid(np.arange(p, rows, s), np.arange(p, cols, s), indexing="ij")
        tracked = np.union1d(rr.ravel() * cols + cc.ravel(), keep)
    elif strategy in ("random", "keypoint"):
        free = np.setdiff1d(np.arange(n), keep)
        need = count - len(keep)
        if strategy == "random":
            rng = np.random.default_rng([seed, s])
            new = rng.choice(free, size=need, replace=False)
        else:
            if scores is None:
                raise ValueError("keypoint sampling needs per-cell scores")
            sc = np.asarray(scores, dtype=np.float64).reshape(n)[free]
            new = free[np.lexsort((free, -sc))[:need]]
        tracked = np.union1d(keep, new)
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    query = np.setdiff1d(np.arange(n), tracked)
    if len(query) and len(tracked) < 4:
        raise ValueError(f"only {len(tracked)} tracked cells; interpolation needs 4")
    if len(query):
        tc = np.stack([tracked // cols, tracked % cols], axis=1)
        qc = np.stack([query // cols, query % cols], axis=1)
        nb = tracked[kernels.knn4(tc, qc)]
    else:
        nb = np.zeros((0, 4), dtype=np.int64)
    return SampleSet(tracked, query, nb, (rows, cols))


# -- the loop -------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    factor: int
    tracked: int
    tokens: int
    wall_ms: float
    refine_ms: float
    epe_tracked: float | None = None
    epe_tracked_max: float | None = None
    epe_interp: float | None = None
    state: np.ndarray | None = None  # (T, rows * cols, 4) dense grid state after the iteration


@dataclass
class TrackingResult:
    tracks: TrackState  # H x W
    grid: TrackState  # rows x cols
    iterations: list[IterationRecord]

    @property
    def total_tokens(self) -> int:
        return sum(it.tokens for it in self.iterations)


def _motions(state, d0):
    m = np.empty_like(state)
    m[..., :2] = state[..., :2] - state[0:1, :, :2]
    m[..., 2] = state[..., 2] - d0[None, :]
    m[..., 3] = state[..., 3]
    return m


def _apply_motion(origin_uv, d0, motion):
    T = motion.shape[0]
    out = np.empty(motion.shape)
    out[..., :2] = origin_uv[None] + motion[..., :2]
    out[..., 2] = np.maximum(d0[None] + motion[..., 2], _DEPTH_FLOOR)
    out[..., 3] = np.clip(motion[..., 3], 0.0, 1.0)
    out[0, :, :2] = origin_uv
    out[0, :, 2] = d0
    out[0, :, 3] = 1.0
    assert out.shape[0] == T
    return out


def _epe(pred, gt_pts):
    e = np.linalg.norm(pred[1:, :, :2] - gt_pts[1:, :, :2], axis=-1)
    return e


def run_tracking(video: RgbdVideo, cfg: EngineConfig, weights: EngineWeights | None = None,
                 gt: GroundTruth | None = None, profiler: Profiler | None = None,
                 keep_states: bool = True) -> TrackingResult:
    prof = profiler or NullProfiler()
    T, H, W = video.shape
    r = cfg.r
    if H % r or W % r:
        raise ValueError(f"video {H}x{W} not divisible by r={r}")
    rows, cols = H // r, W // r
    N = rows * cols
    if cfg.refiner == "oracle" and gt is None:
        raise ValueError("the oracle refiner needs ground truth")
    if weights is None:
        weights = EngineWeights.random(cfg)
    weights.check(cfg)

    need_features = cfg.refiner == "transformer" or cfg.interpolator == "learnable"
    pyr = None
    if need_features:
        with prof.stage("feature_extraction", units=T * N, iteration=0):
            pyr = extract_features(video, weights.extractor, cfg.corr.n_levels)

    gr, gc = np.divmod(np.arange(N), cols)
    cells = np.stack([gr, gc], axis=1)
    origin = np.stack([gc * r, gr * r], axis=1).astype(np.float64)
    state = np.empty((T, N, 4))
    state[..., 0] = origin[:, 0]
    state[..., 1] = origin[:, 1]
    state[..., 2] = video.depth[:, gr * r, gc * r]
    state[..., 3] = 1.0
    d0 = state[0, :, 2].copy()
    gt_grid = gt.tracks.points[:, gt.lookup(origin)] if gt is not None else None

    scores = keypoint_scores(video.frames[0], r) if cfg.sampling == "keypoint" else None
    phase = cfg.schedule.factors[0] // 2
    tracked = np.zeros(0, dtype=np.int64)
    records = []
    for k, s in enumerate(cfg.schedule.factors):
        t_iter = time.perf_counter()
        with prof.stage("interpolation", units=0, iteration=k):
            sample = sample_points((rows, cols), s, cfg.sampling, cfg.sampling_seed, keep=tracked,
                                   phase=phase, scores=scores)
        prev = tracked
        tracked = sample.tracked_ids
        assert np.all(np.isin(prev, tracked))
        n_tok = T * len(tracked)

        t_ref = time.perf_counter()
        sub = state[:, tracked]
        if cfg.refiner == "oracle":
            sub_state = TrackState(sub, (len(tracked), 1), origin[tracked])
            sub = np.array(oracle_refiner(sub_state, gt, cfg.step_fraction).points)
        else:
            tokens = assemble_tokens(sub, origin[tracked], pyr, video.depth, cfg, weights, prof, k)
            with prof.stage("phi_forward", units=n_tok, iteration=k):
                ctx = spatial_context(cells[tracked], (rows, cols), s, weights.phi.anchor_stride,
                                      weights.phi.window)
                upd = phi_forward(tokens, weights.phi, ctx)
            sub = sub.copy()
            sub[..., :3] += upd[..., :3]
            sub[..., 2] = np.maximum(sub[..., 2], _DEPTH_FLOOR)
            o = np.clip(sub[..., 3], _VIS_CLIP, 1 - _VIS_CLIP)
            sub[..., 3] = 1.0 / (1.0 + np.exp(-(np.log(o / (1 - o)) + upd[..., 3])))
            sub[0, :, :2] = origin[tracked]
            sub[0, :, 2] = d0[tracked]
            sub[0, :, 3] = 1.0
        refine_ms = (time.perf_counter() - t_ref) * 1e3
        if not np.all(np.isfinite(sub)):
            raise FloatingPointError(f"non-finite track state after refinement in iteration {k}")
        state[:, tracked] = sub

        query = sample.query_ids
        if len(query):
            with prof.stage("interpolation", units=len(query), iteration=k):
                motion = _motions(state, d0)
                qm = _interpolate(cfg.interpolator, sample, motion, cells, pyr, weights, s, phase)
                state[:, query] = _apply_motion(origin[query], d0[query], qm)
            if not np.all(np.isfinite(state)):
                raise FloatingPointError(f"non-finite track state after interpolation in iteration {k}")

        rec = IterationRecord(k, s, len(tracked), n_tok, (time.perf_counter() - t_iter) * 1e3, refine_ms,
                              state=state.copy() if keep_states else None)
        if gt_grid is not None:
            e_tr = _epe(state[:, tracked], gt_grid[:, tracked])
            rec.epe_tracked = float(e_tr.mean()) if e_tr.size else None
            rec.epe_tracked_max = float(e_tr.max()) if e_tr.size else None
            if len(query):
                rec.epe_interp = float(_epe(state[:, query], gt_grid[:, query]).mean())
        records.append(rec)

    grid = TrackState(state, (rows, cols), origin)
    with prof.stage("upsample", units=H * W, iteration=cfg.K - 1):
        full = upsample_full(grid, cfg.interpolator, r, video.depth[0], pyr, weights.interp)
    return TrackingResult(full, grid, records)


def _interpolate(kind, sample: SampleSet, motion, cells, pyr, weights, s, phase):
    query = sample.query_ids
    if kind == "nearest":
        return interp_nearest(cells[:, ::-1].astype(np.float64), motion, cells[query, ::-1].astype(np.float64),
                              sample.neighbor_map)
    if kind == "bilinear":
        rows, cols = sample.grid_shape
        p = phase % s
        R, C = len(range(p, rows, s)), len(range(p, cols, s))
        tr = sample.tracked_ids
        if len(tr) != R * C:
            raise ValueError("bilinear interpolation needs the tracked set to be a full subgrid")
        nodes = motion[:, tr].reshape(motion.shape[0], R, C, -1)
        return interp_bilinear(nodes, (p, p), s, cells[query, ::-1].astype(np.float64))
    fmap = pyr.levels[0][0]
    out, _ = interp_learnable(fmap, sample, motion, weights.interp)
    return out


def upsample_full(grid: TrackState, interpolator: str, r: int, depth0, pyr: FeaturePyramid | None = None,
                  params: AttnInterpParams | None = None, chunk: int = 16384) -> TrackState:
    """Upsample ``rows x cols`` grid tracks (cell pitch ``r`` px) to every pixel.

    Each pixel blends the 4 grid trajectories at the corners of its enclosing
    cell (clamped at the border); grid pixels copy their trajectory exactly.
    """
    if r == 1:
        return grid
    rows, cols = grid.grid_shape
    H, W = rows * r, cols * r
    pts = grid.points
    T = pts.shape[0]
    d0g = pts[0, :, 2]
    motion = _motions(pts, d0g)
    vv, uu = np.divmod(np.arange(H * W), W)
    qpos = np.stack([uu, vv], axis=1).astype(np.float64)
    depth0 = np.asarray(depth0, dtype=np.float64)
    out = np.empty((T, H * W, 4))
    if interpolator == "bilinear":
        qm = interp_bilinear(motion.reshape(T, rows, cols, 4), (0, 0), r, qpos)
    else:
        x0 = np.minimum(uu // r, cols - 1)
        y0 = np.minimum(vv // r, rows - 1)
        x1 = np.minimum(x0 + 1, cols - 1)
        y1 = np.minimum(y0 + 1, rows - 1)
        nb = np.stack([y0 * cols + x0, y0 * cols + x1, y1 * cols + x0, y1 * cols + x1], axis=1)
        gpos = np.stack([np.arange(rows * cols) % cols, np.arange(rows * cols) // cols], axis=1) * float(r)
        if interpolator == "nearest":
            qm = interp_nearest(gpos, motion, qpos, nb)
        elif interpolator == "learnable":
            if pyr is None or params is None:
                raise ValueError("learnable upsampling needs the feature pyramid and interpolator params")
            fmap = pyr.levels[0][0].reshape(rows * cols, -1)
            qm = np.empty((T, H * W, 4))
            for s in range(0, H * W, chunk):
                e = min(H * W, s + chunk)
                qf = sample_features(pyr, 0, 0, qpos[s:e])
                m, _ = interp_learnable_points(qf, qpos[s:e] / r, fmap[nb[s:e]], gpos[nb[s:e]] / r,
                                               motion[:, nb[s:e]], params)
                qm[:, s:e] = m
        else:
            raise ValueError(f"unknown interpolator {interpolator!r}")
    d0 = depth0.reshape(H * W)
    out = _apply_motion(qpos, d0, qm)
    node = (vv % r == 0) & (uu % r == 0)
    gid = (vv // r) * cols + (uu // r)
    out[:, node] = pts[:, gid[node]]
    return TrackState(out, (H, W), qpos)
