import numpy as np
import pytest

from densetrack.core import TrackState, uvd_to_xyz
from densetrack.synth import Quad, SceneConfig, generate_scene, opposing_pair, oracle_refiner


def test_frame0_is_the_pixel_grid(small_scene):
    video, gt = small_scene
    T, H, W = video.shape
    p = gt.tracks.points
    vv, uu = np.divmod(np.arange(H * W), W)
    assert np.array_equal(p[0, :, 0], uu) and np.array_equal(p[0, :, 1], vv)
    np.testing.assert_array_equal(p[0, :, 2], video.depth[0].ravel())
    assert np.all(p[0, :, 3] == 1.0)


def test_trajectories_are_straight_3d_lines(small_scene):
    video, gt = small_scene
    xyz = uvd_to_xyz(gt.tracks.points[..., :3], video.intrinsics)
    vel = xyz[1] - xyz[0]
    for t in range(2, video.shape[0]):
        np.testing.assert_allclose(xyz[t] - xyz[0], t * vel, atol=1e-9)


def test_static_background_has_zero_motion():
    video, gt = generate_scene(SceneConfig(seed=1, T=3, H=16, W=16, n_objects=0))
    np.testing.assert_allclose(gt.tracks.points[2], gt.tracks.points[0], atol=1e-12)
    assert gt.visible.all()
    np.testing.assert_allclose(video.frames[0], video.frames[2])


def test_occluded_points_are_behind_something():
    q_far = Quad((0.0, 0.0, 5.0), (0.6, 0.6), (0.0, 0.0, 0.0), 1)
    q_near = Quad((-1.2, 0.0, 3.0), (0.4, 0.4), (0.25, 0.0, 0.0), 2)
    video, gt = generate_scene(SceneConfig(seed=0, T=8, H=32, W=32, objects=(q_far, q_near)))
    occ = ~gt.visible[1:]
    assert occ.any()
    pts = gt.tracks.points[1:]
    t, idx = np.nonzero(occ.reshape(occ.shape[0], -1))
    u, v, d = pts[t, idx, 0], pts[t, idx, 1], pts[t, idx, 2]
    inside = (u > -0.5) & (u < 31.5) & (v > -0.5) & (v < 31.5)
    iu = np.clip(np.rint(u[inside]).astype(int), 0, 31)
    iv = np.clip(np.rint(v[inside]).astype(int), 0, 31)
    # the rendered depth at the nearest pixel is (mostly) in front of the occluded point
    assert np.mean(video.depth[t[inside] + 1, iv, iu] < d[inside]) > 0.9


def test_generation_is_deterministic():
    a = generate_scene(SceneConfig(seed=9, T=3, H=16, W=24))
    b = generate_scene(SceneConfig(seed=9, T=3, H=16, W=24))
    assert np.array_equal(a[0].frames, b[0].frames)
    assert np.array_equal(a[1].tracks.points, b[1].tracks.points)


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(T=1).validate()
    with pytest.raises(ValueError):
        SceneConfig(z_min=5, z_max=4).validate()
    with pytest.raises(ValueError):
        SceneConfig(T=100, max_velocity=(0, 0, 0.5)).validate()


def test_opposing_pair_has_opposite_velocities():
    cfg = opposing_pair(4)
    a, b = cfg.objects
    np.testing.assert_allclose(np.add(a.velocity, b.velocity), 0.0)
    _, gt = generate_scene(cfg)
    assert set(np.unique(gt.owner)) == {0, 1, 2}


def test_lookup_rejects_non_pixels(small_scene):
    _, gt = small_scene
    assert gt.lookup([[3.0, 2.0]])[0] == 2 * 48 + 3
    with pytest.raises(LookupError):
        gt.lookup([[3.5, 2.0]])
    with pytest.raises(LookupError):
        gt.lookup([[48.0, 0.0]])


def test_oracle_refiner_step_one_is_exact(small_scene):
    _, gt = small_scene
    g = gt.tracks.points
    init = np.repeat(g[:1], g.shape[0], axis=0)
    s = TrackState(init, gt.tracks.grid_shape)
    out = oracle_refiner(s, gt, 1.0)
    assert np.array_equal(out.points, g)


def test_oracle_refiner_half_step_halves_error(small_scene):
    _, gt = small_scene
    g = gt.tracks.points
    init = np.repeat(g[:1], g.shape[0], axis=0)
    s = TrackState(init, gt.tracks.grid_shape)
    ids = np.arange(0, s.N, 3)
    out = oracle_refiner(s, gt, 0.5, ids)
    e0 = np.linalg.norm(init[..., :3] - g[..., :3], axis=-1)
    e1 = np.linalg.norm(out.points[..., :3] - g[..., :3], axis=-1)
    np.testing.assert_allclose(e1[:, ids], 0.5 * e0[:, ids], rtol=1e-12, atol=1e-12)
    others = np.setdiff1d(np.arange(s.N), ids)
    assert np.array_equal(out.points[:, others], init[:, others])
    with pytest.raises(ValueError):
        oracle_refiner(s, gt, 0.0)
