import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from densetrack import kernels
from densetrack.kernels import _numpy

BACKENDS = kernels.available_backends()


def _mod(name):
    return kernels._module(name)


def _case(seed, H=7, W=9, C=3, N=5):
    rng = np.random.default_rng(seed)
    fmap = rng.normal(size=(H, W, C))
    pos = np.column_stack([rng.uniform(-2, W + 1, N), rng.uniform(-2, H + 1, N)])
    return rng, fmap, pos


def test_compiled_backend_is_built():
    assert "compiled" in BACKENDS


def test_window_offsets_row_major():
    off = kernels.window_offsets(1)
    assert off.tolist()[:4] == [[-1, -1], [0, -1], [1, -1], [-1, 0]]
    assert off.tolist() == [list(map(float, o)) for o in oracles.offsets(1)]


def test_backend_switch_is_scoped():
    prev = kernels.BACKEND
    with kernels.backend("numpy"):
        assert kernels.corr4d is _numpy.corr4d
    assert kernels.BACKEND == prev
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")


@pytest.mark.parametrize("name", BACKENDS)
def test_bilinear_against_oracle(name):
    _, fmap, pos = _case(0, N=20)
    got = _mod(name).bilinear_sample(fmap, pos)
    want = [oracles.bilerp(fmap, x, y) for x, y in pos]
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("name", BACKENDS)
def test_bilinear_hits_cells_exactly(name):
    _, fmap, _ = _case(1)
    pos = np.array([[0.0, 0.0], [8.0, 6.0], [3.0, 2.0]])
    got = _mod(name).bilinear_sample(fmap, pos)
    np.testing.assert_array_equal(got, fmap[[0, 6, 2], [0, 8, 3]])


@pytest.mark.parametrize("name", BACKENDS)
def test_corr_window_against_oracle(name):
    rng, fmap, pos = _case(2)
    q = rng.normal(size=(5, 3))
    got = _mod(name).corr_window(fmap, q, pos, 2)
    want = [oracles.corr_window(fmap, q[i], x, y, 2) for i, (x, y) in enumerate(pos)]
    np.testing.assert_allclose(got, want, atol=1e-10)


@pytest.mark.parametrize("name", BACKENDS)
def test_corr4d_against_oracle(name):
    rng, fq, qpos = _case(3)
    ft = rng.normal(size=fq.shape)
    cpos = qpos + rng.normal(size=qpos.shape)
    got = _mod(name).corr4d(fq, ft, qpos, cpos, 5)
    assert got.shape == (5, 25, 25)
    for i in range(5):
        want = oracles.corr4d(fq, ft, qpos[i, 0], qpos[i, 1], cpos[i, 0], cpos[i, 1], 5)
        np.testing.assert_allclose(got[i], want, atol=1e-10)


@pytest.mark.parametrize("name", BACKENDS)
def test_depth_window_against_oracle(name):
    rng, _, pos = _case(4)
    depth = rng.uniform(0.5, 4.0, size=(7, 9))
    depth[3, 4] = 0.0
    qd = rng.uniform(1, 3, 5)
    got = _mod(name).depth_window(depth, qd, pos, 1, 1e-3)
    want = [oracles.depth_window(depth, qd[i], x, y, 1, 1e-3) for i, (x, y) in enumerate(pos)]
    np.testing.assert_allclose(got, want, atol=1e-10)


@pytest.mark.parametrize("name", BACKENDS)
def test_project_rows_against_oracle(name):
    rng = np.random.default_rng(5)
    c = rng.normal(size=(2, 3, 9))
    W, b = rng.normal(size=(9, 4)), rng.normal(size=4)
    g, o = rng.uniform(0.5, 1.5, 4), rng.normal(size=4)
    got = _mod(name).project_rows(c, W, b, g, o, 1e-5)
    assert got.shape == (2, 3, 4)
    for i in range(2):
        for j in range(3):
            np.testing.assert_allclose(got[i, j], oracles.project_row(c[i, j], W, b, g, o, 1e-5), atol=1e-10)


@pytest.mark.parametrize("name", BACKENDS)
def test_dual_conv_against_oracle(name):
    rng = np.random.default_rng(6)
    n = 3
    c = rng.normal(size=(2, n * n, n * n))
    k1 = rng.normal(size=(n * n, n * n, 3, 3))
    k2 = rng.normal(size=(2, n * n, 3, 3))
    got = _mod(name).dual_conv(c, k1, k2)
    assert got.shape == (2, 2 * n * n)
    for i in range(2):
        np.testing.assert_allclose(got[i], oracles.dual_conv(c[i], k1, k2), atol=1e-10)


@pytest.mark.parametrize("name", BACKENDS)
def test_knn4_ties_break_by_index(name):
    tracked = np.array([[0, 0], [0, 2], [2, 0], [2, 2], [1, 3]])
    query = np.array([[1, 1], [5, 5]])
    got = _mod(name).knn4(tracked, query)
    assert got.tolist() == [[0, 1, 2, 3], [3, 4, 1, 2]]
    assert got.tolist() == oracles.knn4(tracked.tolist(), query.tolist())


pts = st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=4, max_size=30, unique=True)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@settings(max_examples=40, deadline=None)
@given(pts, pts)
def test_knn4_backends_agree(tracked, query):
    a = _mod("numpy").knn4(np.array(tracked), np.array(query))
    b = _mod("compiled").knn4(np.array(tracked), np.array(query))
    assert np.array_equal(a, b)
    assert a.tolist() == oracles.knn4(tracked, query)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12), st.integers(2, 11), st.sampled_from([1, 3, 5, 7]))
def test_float_kernels_backends_agree(seed, N, H, n):
    rng = np.random.default_rng(seed)
    W, C = H + 3, 4
    fq, ft = rng.normal(size=(H, W, C)), rng.normal(size=(H, W, C))
    qpos = np.column_stack([rng.uniform(-3, W + 2, N), rng.uniform(-3, H + 2, N)])
    cpos = qpos + rng.normal(size=qpos.shape)
    depth = rng.uniform(0.0, 5.0, size=(H, W))
    qd = rng.uniform(0.5, 5.0, N)
    np_, cc = _mod("numpy"), _mod("compiled")
    for fn, args in [
        ("bilinear_sample", (fq, qpos)),
        ("corr_window", (ft, rng.normal(size=(N, C)), cpos, n // 2)),
        ("corr4d", (fq, ft, qpos, cpos, n)),
        ("depth_window", (depth, qd, cpos, n // 2, 1e-3)),
    ]:
        np.testing.assert_allclose(getattr(cc, fn)(*args), getattr(np_, fn)(*args), rtol=1e-12, atol=1e-12)
    c = rng.normal(size=(N, n * n, n * n))
    P = 5
    pargs = (c, rng.normal(size=(n * n, P)), rng.normal(size=P), rng.normal(size=P), rng.normal(size=P), 1e-5)
    np.testing.assert_allclose(cc.project_rows(*pargs), np_.project_rows(*pargs), rtol=1e-10, atol=1e-12)
    k1 = rng.normal(size=(n * n, n * n, 3, 3))
    k2 = rng.normal(size=(2, n * n, 3, 3))
    np.testing.assert_allclose(cc.dual_conv(c, k1, k2), np_.dual_conv(c, k1, k2), rtol=1e-9, atol=1e-9)


def test_auto_backend_mixes_implementations():
    with kernels.backend("auto"):
        assert kernels.project_rows is _numpy.project_rows
        assert kernels.dual_conv is _numpy.dual_conv
        if "compiled" in BACKENDS:
            assert kernels.corr4d is _mod("compiled").corr4d
