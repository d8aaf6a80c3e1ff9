"""Block DCT frequency profiles of flow fields."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def zigzag_order(B: int) -> tuple[tuple[int, int], ...]:
    """JPEG zigzag scan of a ``B x B`` block as ``(row, col)`` pairs."""
    if B < 1:
        raise ValueError(f"block size must be >= 1, got {B}")
    order = []
    for s in range(2 * B - 1):
        lo, hi = max(0, s - B + 1), min(s, B - 1)
        rows = range(lo, hi + 1) if s % 2 else range(hi, lo - 1, -1)
        order.extend((i, s - i) for i in rows)
    return tuple(order)


@lru_cache(maxsize=None)
def _dct_matrix(B: int) -> np.ndarray:
    n = np.arange(B)
    m = np.cos(np.pi * (2 * n[None, :] + 1) * n[:, None] / (2 * B))
    m *= np.sqrt(2.0 / B)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def dct2_block(block) -> np.ndarray:
    """Orthonormal 2D DCT-II of a square block (or a stack ``(..., B, B)``)."""
    x = np.asarray(block, dtype=np.float64)
    B = x.shape[-1]
    if x.ndim < 2 or x.shape[-2] != B:
        raise ValueError(f"block must be square, got {x.shape}")
    c = _dct_matrix(B)
    return c @ x @ c.T


def idct2_block(coeffs) -> np.ndarray:
    y = np.asarray(coeffs, dtype=np.float64)
    c = _dct_matrix(y.shape[-1])
    return c.T @ y @ c


def flow_blocks(flow, B: int) -> np.ndarray:
    """Crop ``(H, W, 2)`` to whole blocks; returns ``(2, nby, nbx, B, B)``."""
    f = np.asarray(flow, dtype=np.float64)
    if f.ndim != 3 or f.shape[-1] != 2:
        raise ValueError(f"flow must be H x W x 2, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("flow must be finite")
    H, W, _ = f.shape
    if H < B or W < B:
        raise ValueError(f"flow {H}x{W} is smaller than one {B}x{B} block")
    nby, nbx = H // B, W // B
    f = f[: nby * B, : nbx * B]
    return f.transpose(2, 0, 1).reshape(2, nby, B, nbx, B).transpose(0, 1, 3, 2, 4)


def flow_spectrum(flow, B: int = 8) -> np.ndarray:
    """Mean absolute DCT coefficient per zigzag index, over blocks and both components."""
    coeffs = np.abs(dct2_block(flow_blocks(flow, B)))
    zz = np.array(zigzag_order(B))
    flat = coeffs[..., zz[:, 0], zz[:, 1]]  # (2, nby, nbx, B*B)
    return flat.reshape(-1, B * B).mean(axis=0)


def track_flow(points, grid_shape, t: int) -> np.ndarray:
    """Flow from the first frame to frame ``t`` of grid tracks ``(T, rows*cols, 4)``."""
    p = np.asarray(points, dtype=np.float64)
    rows, cols = grid_shape
    return (p[t, :, :2] - p[0, :, :2]).reshape(rows, cols, 2)
