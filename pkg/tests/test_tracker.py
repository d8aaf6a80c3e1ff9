import numpy as np
import pytest

import oracles
from densetrack import tracker
from densetrack.core import Schedule
from densetrack.synth import SceneConfig, generate_scene
from densetrack.tracker import (
    EngineConfig,
    EngineWeights,
    assemble_tokens,
    positional_embed,
    run_tracking,
    sample_points,
    upsample_full,
)
from densetrack.features import extract_features


def small_cfg(**kw):
    base = dict(schedule=(4, 2, 1), d_tok=32, n_layers=1, n_heads=2)
    base.update(kw)
    return EngineConfig(**base)


def test_uniform_sampling_example():
    ss = sample_points((8, 8), 4)
    assert [divmod(int(i), 8) for i in ss.tracked_ids] == [(2, 2), (2, 6), (6, 2), (6, 6)]
    assert len(ss.query_ids) == 60
    assert ss.neighbor_map.shape == (60, 4)


def test_neighbor_map_is_knn(rng):
    ss = sample_points((6, 10), 0 + 2, "random", seed=4)
    cells = lambda ids: [(int(i) // 10, int(i) % 10) for i in ids]  # noqa: E731
    tr = cells(ss.tracked_ids)
    want = oracles.knn4(tr, cells(ss.query_ids))
    assert ss.neighbor_map.tolist() == [[int(ss.tracked_ids[j]) for j in row] for row in want]


@pytest.mark.parametrize("strategy", ["uniform", "random", "keypoint"])
def test_nested_sets_persist(strategy, rng):
    scores = rng.uniform(size=(16, 24))
    keep = None
    sizes = []
    for s in (8, 4, 2, 1):
        ss = sample_points((16, 24), s, strategy, seed=3, keep=keep, phase=4, scores=scores)
        if keep is not None:
            assert np.isin(keep, ss.tracked_ids).all()
        keep = ss.tracked_ids
        sizes.append(len(keep))
    assert sizes == [6, 24, 96, 384]


def test_keypoint_prefers_high_scores():
    scores = np.zeros((8, 8))
    scores[1, 5] = scores[7, 0] = scores[3, 3] = scores[4, 6] = 1.0
    ss = sample_points((8, 8), 4, "keypoint", scores=scores)
    assert sorted(ss.tracked_ids.tolist()) == sorted([13, 56, 27, 38])


def test_sampling_errors():
    with pytest.raises(ValueError):
        sample_points((6, 8), 4)
    with pytest.raises(ValueError):
        sample_points((8, 8), 4, "grid")
    with pytest.raises(ValueError):
        sample_points((8, 8), 4, "keypoint")
    with pytest.raises(ValueError, match="regular subgrid"):
        EngineConfig(sampling="random", interpolator="bilinear")


def test_token_counts_follow_the_schedule():
    rows, cols, T = 96, 128, 5
    phase = 4
    total = {}
    for sch in [(8, 4, 2, 1), (1, 1, 1, 1)]:
        keep, n = None, 0
        for s in sch:
            keep = sample_points((rows, cols), s, keep=keep, phase=phase).tracked_ids
            n += T * len(keep)
        total[sch] = n
    assert total[(8, 4, 2, 1)] == 16320 * T
    assert total[(1, 1, 1, 1)] == 49152 * T


def test_positional_embed_against_oracle(rng):
    x = rng.normal(size=(5, 3))
    got = positional_embed(x, 4)
    assert got.shape == (5, 24)
    for i in range(5):
        np.testing.assert_allclose(got[i], oracles.sinusoid(x[i], 4), atol=1e-15)
    np.testing.assert_allclose(positional_embed(2.0, 3), oracles.sinusoid([2.0], 3))


@pytest.mark.parametrize("mode,width", [("project", 285), ("dualconv", 302)])
def test_token_layout_width(mode, width, small_scene):
    cfg = small_cfg(corr_mode=mode)
    w = EngineWeights.random(cfg, 1)
    assert w.tokens.w_in.shape == (width, 32)
    assert sum(cfg.token_dims(32 if mode == "project" else 49).values()) == width


def test_token_assembly_by_hand(small_scene):
    video, gt = small_scene
    cfg = small_cfg()
    w = EngineWeights.random(cfg, 2)
    pyr = extract_features(video, w.extractor)
    ids = gt.lookup(np.array([[8.0, 4.0], [20.0, 12.0]]))
    pts = np.array(gt.tracks.points[:, ids])
    origin = pts[0, :, :2]
    tok = assemble_tokens(pts, origin, pyr, video.depth, cfg, w)
    from densetrack.correlation import corr4d, depth_corr, multiscale_corr, project_corr
    from densetrack.features import sample_feature
    t, i = 3, 1
    p = pts[t, i]
    q = sample_feature(pyr, 0, 0, origin[i])
    raw = np.concatenate([
        sample_feature(pyr, t, 0, p[:2]),
        multiscale_corr(pyr, t, q, p[:2], cfg.corr),
        project_corr(corr4d(pyr, t, origin[i], p[:2], cfg.corr), w.proj).mean(axis=0),
        depth_corr(video.depth, t, p[2], p[:2], cfg.corr),
        [p[3]],
        oracles.sinusoid(p[:3] - pts[0, i, :3], 4),
    ])
    want = (raw @ w.tokens.w_in + w.tokens.b_in + np.array(oracles.sinusoid(p[:3], 4)) @ w.tokens.w_pos
            + np.array(oracles.sinusoid([float(t)], 4)) @ w.tokens.w_time)
    np.testing.assert_allclose(tok[t, i], want, atol=1e-10)


def test_budget_mismatch_fails_at_startup(small_scene):
    video, _ = small_scene
    w = EngineWeights.random(small_cfg(), 0)
    with pytest.raises(ValueError, match="token budget mismatch"):
        run_tracking(video, small_cfg(corr_mode="dualconv"), w)
    with pytest.raises(ValueError, match="token budget mismatch"):
        w.check(small_cfg(n_freq=3))


def test_weights_roundtrip(tmp_path):
    cfg = small_cfg(interpolator="nearest")
    w = EngineWeights.random(cfg, 5)
    w.save(tmp_path / "w.bin", cfg)
    back, cfg2 = EngineWeights.load(tmp_path / "w.bin")
    assert cfg2 == cfg
    a, b = w.blobs(), back.blobs()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_single_iteration_oracle_is_exact(small_scene):
    video, gt = small_scene
    cfg = EngineConfig(schedule=(1,), refiner="oracle", interpolator="nearest", r=1)
    res = run_tracking(video, cfg, gt=gt)
    assert np.array_equal(res.tracks.points, gt.tracks.points)
    assert res.total_tokens == 5 * 32 * 48


@pytest.mark.parametrize("interp", ["nearest", "bilinear", "learnable"])
def test_oracle_pipeline_tracks_persist(interp, small_scene):
    video, gt = small_scene
    cfg = small_cfg(refiner="oracle", interpolator=interp, step_fraction=0.5)
    res = run_tracking(video, cfg, gt=gt)
    assert [it.tracked for it in res.iterations] == [6, 24, 96]
    assert [it.tokens for it in res.iterations] == [30, 120, 480]
    assert res.tracks.grid_shape == (32, 48)
    # persistent points converge geometrically
    first = sample_points((8, 12), 4, phase=2).tracked_ids
    g = gt.tracks.points[:, gt.lookup(res.grid.origin[first])]
    errs = [np.linalg.norm(it.state[1:, first, :2] - g[1:, :, :2], axis=-1).max() for it in res.iterations]
    assert errs[1] <= errs[0] and errs[2] <= errs[1]


def test_transformer_run_is_deterministic(small_scene):
    video, _ = small_scene
    cfg = small_cfg()
    a = run_tracking(video, cfg, EngineWeights.random(cfg, 9))
    b = run_tracking(video, cfg, EngineWeights.random(cfg, 9))
    assert np.array_equal(a.tracks.points, b.tracks.points)
    assert np.all(np.isfinite(a.tracks.points))
    p = a.tracks.points
    assert np.all(p[..., 2] > 0) and np.all((p[..., 3] >= 0) & (p[..., 3] <= 1))


def test_nonfinite_update_is_reported(small_scene, monkeypatch):
    video, _ = small_scene
    cfg = small_cfg(schedule=(2, 1))
    monkeypatch.setattr(tracker, "phi_forward", lambda tok, w, ctx: np.full(tok.shape[:2] + (4,), np.nan))
    with pytest.raises(FloatingPointError, match="iteration 0"):
        run_tracking(video, cfg, EngineWeights.random(cfg, 0))


@pytest.mark.parametrize("interp", ["nearest", "bilinear"])
def test_upsample_copies_grid_pixels_and_preserves_constant_motion(interp):
    video, gt = generate_scene(SceneConfig(seed=2, T=3, H=16, W=24, n_objects=0))
    rows, cols, r = 4, 6, 4
    vv, uu = np.divmod(np.arange(rows * cols), cols)
    origin = np.stack([uu * r, vv * r], axis=1).astype(float)
    pts = np.array(gt.tracks.points[:, gt.lookup(origin)])
    shift = np.array([1.5, -0.5, 0.25])
    pts[1:, :, :3] += shift
    from densetrack.core import TrackState
    grid = TrackState(pts, (rows, cols), origin)
    full = upsample_full(grid, interp, r, video.depth[0])
    fp = full.points
    node = gt.lookup(origin)
    assert np.array_equal(fp[:, node], pts)
    d0 = video.depth[0].ravel()
    np.testing.assert_allclose(fp[1:, :, :2] - fp[0:1, :, :2], np.broadcast_to(shift[:2], fp[1:, :, :2].shape), atol=1e-12)
    np.testing.assert_allclose(fp[1:, :, 2] - d0, gt.tracks.points[1:, :, 2] - d0 + shift[2], atol=1e-12)
