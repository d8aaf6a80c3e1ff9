"""Vectorized numpy kernels.

Reference backend, always importable. Signatures and conventions match the
compiled backend exactly:

* feature maps are ``(H, W, C)`` float64, depth maps ``(H, W)``;
* positions are ``(N, 2)`` arrays of ``(x, y)`` in map cells, ``x`` along
  the width axis;
* out-of-range lookups clamp to the border cell.
"""

from __future__ import annotations

import numpy as np

# points per chunk for the gather-heavy kernels; bounds peak memory
_CHUNK = 2048


def window_offsets(radius: int) -> np.ndarray:
    """Integer ``(dx, dy)`` offsets of a ``(2r+1)^2`` window, row-major in dy."""
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dx.ravel(), dy.ravel()], axis=1)


def bilinear_sample(fmap: np.ndarray, pos: np.ndarray) -> np.ndarray:
    if fmap.ndim == 2:
        return bilinear_sample(fmap[:, :, None], pos)[:, 0]
    H, W, _ = fmap.shape
    x = np.clip(pos[:, 0], 0.0, W - 1.0)
    y = np.clip(pos[:, 1], 0.0, H - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    wx = (x - x0)[:, None]
    wy = (y - y0)[:, None]
    top = (1.0 - wx) * fmap[y0, x0] + wx * fmap[y0, x1]
    bot = (1.0 - wx) * fmap[y1, x0] + wx * fmap[y1, x1]
    return (1.0 - wy) * top + wy * bot


def _window_sample(fmap, pos, offsets):
    n, k = pos.shape[0], offsets.shape[0]
    p = (pos[:, None, :] + offsets[None, :, :]).reshape(n * k, 2)
    out = bilinear_sample(fmap, p)
    return out.reshape((n, k) + out.shape[1:])


def corr_window(fmap, qfeat, pos, radius):
    offsets = window_offsets(radius)
    out = np.empty((pos.shape[0], offsets.shape[0]))
    for s in range(0, pos.shape[0], _CHUNK):
        e = s + _CHUNK
        win = _window_sample(fmap, pos[s:e], offsets)
        out[s:e] = np.einsum("nkc,nc->nk", win, qfeat[s:e])
    return out


def corr4d(fmap_q, fmap_t, qpos, cpos, n):
    offsets = window_offsets(n // 2)
    k = offsets.shape[0]
    out = np.empty((qpos.shape[0], k, k))
    for s in range(0, qpos.shape[0], _CHUNK):
        e = s + _CHUNK
        a = _window_sample(fmap_q, qpos[s:e], offsets)
        b = _window_sample(fmap_t, cpos[s:e], offsets)
        out[s:e] = np.matmul(a, b.transpose(0, 2, 1))
    return out


def depth_window(depth, qd, pos, radius, floor):
    offsets = window_offsets(radius)
    d = _window_sample(depth, pos, offsets)
    return np.log(qd)[:, None] - np.log(np.maximum(d, floor))


def project_rows(c, weight, bias, gain, offset, eps):
    y = c @ weight + bias
    mu = y.mean(axis=-1, keepdims=True)
    var = ((y - mu) ** 2).mean(axis=-1, keepdims=True)
    y = (y - mu) / np.sqrt(var + eps) * gain + offset
    return np.maximum(y, 0.0)


def _conv_same(x, k):
    # x: (N, I, h, w); k: (O, I, kh, kw) -> (N, O, h, w), zero padding
    _, _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return np.einsum("nihwyx,oiyx->nohw", win, k, optimize=True)


def dual_conv(c, k1, k2):
    N, nn, _ = c.shape
    n = int(round(nn ** 0.5))
    out = np.empty((N, k2.shape[0] * nn))
    for s in range(0, N, _CHUNK // 4):
        cc = c[s:s + _CHUNK // 4]
        m = cc.shape[0]
        # channels = target offsets, spatial = query offsets
        x = cc.transpose(0, 2, 1).reshape(m, nn, n, n)
        y = _conv_same(x, k1)
        # channels = query offsets, spatial = target offsets
        y = y.reshape(m, nn, nn).transpose(0, 2, 1).reshape(m, nn, n, n)
        z = _conv_same(y, k2)
        out[s:s + m] = z.reshape(m, -1)
    return out


def knn4(tracked, query):
    tracked = np.asarray(tracked, dtype=np.int64)
    query = np.asarray(query, dtype=np.int64)
    M = tracked.shape[0]
    out = np.empty((query.shape[0], 4), dtype=np.int64)
    idx = np.arange(M, dtype=np.int64)
    step = max(1, 4_000_000 // max(M, 1))
    for s in range(0, query.shape[0], step):
        q = query[s:s + step]
        d2 = ((q[:, None, :] - tracked[None, :, :]) ** 2).sum(-1)
        key = d2 * M + idx[None, :]
        part = np.argpartition(key, 3, axis=1)[:, :4]
        order = np.argsort(np.take_along_axis(key, part, axis=1), axis=1)
        out[s:s + step] = np.take_along_axis(part, order, axis=1)
    return out
