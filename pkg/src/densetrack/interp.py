"""Motion interpolation from tracked to untracked points.

Motions are ``(T, N, F)`` arrays; in the tracker ``F = 4`` holds
``(du, dv, dd, o)``: displacement from the trajectory's frame-0 state plus
visibility. Three schemes share that layout:

* nearest: copy the closest of the 4 predefined tracked neighbours;
* bilinear: separable blend on a regular tracked subgrid;
* learnable: softmax weights over the 4 neighbours from an attention module
  whose query feature is refined by cross-attention blocks with an ALiBi
  penalty on the L1 pixel distance.

The learnable path has a hand-written backward pass
(:func:`learnable_backward`) for the scalar loss ``<upstream, output>``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .blobs import f32

LN_EPS = 1e-5


# -- fixed schemes --------------------------------------------------------------


def interp_nearest(tracked_pos, tracked_motion, query_pos, neighbor_map) -> np.ndarray:
    """Copy each query's nearest neighbour motion (ties go to the lower tracked index).

    ``neighbor_map`` indexes rows of ``tracked_pos`` / axis 1 of ``tracked_motion``.
    """
    tp = np.asarray(tracked_pos, dtype=np.float64)
    qp = np.asarray(query_pos, dtype=np.float64)
    nb = np.asarray(neighbor_map, dtype=np.intp)
    if nb.shape[0] == 0:
        return np.zeros((tracked_motion.shape[0], 0, tracked_motion.shape[2]))
    d2 = ((tp[nb] - qp[:, None, :]) ** 2).sum(-1)
    # lexicographic (distance, index): sort by index first, then stable by distance
    order = np.argsort(nb, axis=1, kind="stable")
    d2s = np.take_along_axis(d2, order, axis=1)
    best = np.take_along_axis(order, np.argmin(d2s, axis=1)[:, None], axis=1)[:, 0]
    pick = nb[np.arange(len(nb)), best]
    return np.asarray(tracked_motion)[:, pick]


def interp_bilinear(node_motion, phase, spacing: int, query_pos) -> np.ndarray:
    """Bilinear blend of motions on a regular subgrid.

    ``node_motion`` is ``(T, R, C, F)``; node ``(a, b)`` sits at
    ``(u, v) = (phase[1] + b * spacing, phase[0] + a * spacing)`` in the same
    units as ``query_pos`` (``(Q, 2)`` as ``(u, v)``). Queries outside the
    node hull clamp to the border nodes.
    """
    m = np.asarray(node_motion, dtype=np.float64)
    _, R, C, _ = m.shape
    qp = np.asarray(query_pos, dtype=np.float64)
    gx = np.clip((qp[:, 0] - phase[1]) / spacing, 0.0, C - 1.0)
    gy = np.clip((qp[:, 1] - phase[0]) / spacing, 0.0, R - 1.0)
    x0 = np.floor(gx).astype(np.intp)
    y0 = np.floor(gy).astype(np.intp)
    x1 = np.minimum(x0 + 1, C - 1)
    y1 = np.minimum(y0 + 1, R - 1)
    wx = (gx - x0)[None, :, None]
    wy = (gy - y0)[None, :, None]
    top = (1.0 - wx) * m[:, y0, x0] + wx * m[:, y0, x1]
    bot = (1.0 - wx) * m[:, y1, x0] + wx * m[:, y1, x1]
    return (1.0 - wy) * top + wy * bot


# -- learnable scheme -----------------------------------------------------------


@dataclass(frozen=True)
class AttnBlock:
    wq: np.ndarray  # (heads, d_head, C)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray  # (C, heads * d_head)
    ln_g: np.ndarray  # (C,)
    ln_b: np.ndarray  # (C,)


_BLOCK_FIELDS = ("wq", "wk", "wv", "wo", "ln_g", "ln_b")


@dataclass(frozen=True)
class AttnInterpParams:
    blocks: tuple[AttnBlock, ...]
    slopes: np.ndarray  # (heads,), > 0
    score_q: np.ndarray  # (d_score, C)
    score_k: np.ndarray  # (d_score, C)

    def __post_init__(self):
        H = self.slopes.shape[0]
        if H < 1 or np.any(~(self.slopes > 0)):
            raise ValueError("need at least one head and positive ALiBi slopes")
        C = self.score_q.shape[1]
        if self.score_k.shape != self.score_q.shape:
            raise ValueError("score projections must share a shape")
        for b in self.blocks:
            if b.wq.shape[0] != H or b.wq.shape[2] != C or b.wo.shape != (C, H * b.wq.shape[1]):
                raise ValueError("attention block shapes are inconsistent")
        for a in self.arrays().values():
            if not np.all(np.isfinite(a)):
                raise ValueError("interpolator parameters must be finite")

    @property
    def C(self) -> int:
        return self.score_q.shape[1]

    @property
    def n_heads(self) -> int:
        return self.slopes.shape[0]

    @classmethod
    def random(cls, seed: int = 0, C: int = 32, n_layers: int = 1, n_heads: int = 4,
               d_head: int = 8, d_score: int = 16) -> "AttnInterpParams":
        rng = np.random.default_rng(seed)
        s_in = 1.0 / np.sqrt(C)
        blocks = []
        for _ in range(n_layers):
            blocks.append(
                AttnBlock(
                    wq=f32(rng.normal(0, s_in, (n_heads, d_head, C))),
                    wk=f32(rng.normal(0, s_in, (n_heads, d_head, C))),
                    wv=f32(rng.normal(0, s_in, (n_heads, d_head, C))),
                    wo=f32(rng.normal(0, 1.0 / np.sqrt(n_heads * d_head), (C, n_heads * d_head))),
                    ln_g=f32(1.0 + rng.normal(0, 0.05, C)),
                    ln_b=f32(rng.normal(0, 0.05, C)),
                )
            )
        slopes = 2.0 ** -np.arange(1, n_heads + 1, dtype=np.float64)
        return cls(
            tuple(blocks),
            slopes,
            f32(rng.normal(0, s_in, (d_score, C))),
            f32(rng.normal(0, s_in, (d_score, C))),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, b in enumerate(self.blocks):
            for n in _BLOCK_FIELDS:
                out[f"block{i}.{n}"] = getattr(b, n)
        out["slopes"] = self.slopes
        out["score_q"] = self.score_q
        out["score_k"] = self.score_k
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "AttnInterpParams":
        n_blocks = len({k.split(".")[0] for k in arrays if k.startswith("block")})
        blocks = tuple(
            AttnBlock(**{n: np.asarray(arrays[f"block{i}.{n}"], dtype=np.float64) for n in _BLOCK_FIELDS})
            for i in range(n_blocks)
        )
        return cls(blocks, np.asarray(arrays["slopes"], dtype=np.float64),
                   np.asarray(arrays["score_q"], dtype=np.float64),
                   np.asarray(arrays["score_k"], dtype=np.float64))

    def with_array(self, name: str, value) -> "AttnInterpParams":
        a = dict(self.arrays())
        a[name] = np.asarray(value, dtype=np.float64)
        return AttnInterpParams.from_arrays(a)

    def with_blocks(self, n: int) -> "AttnInterpParams":
        return replace(self, blocks=self.blocks[:n])


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _layernorm(y, g, b):
    mu = y.mean(-1, keepdims=True)
    var = ((y - mu) ** 2).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (y - mu) * inv
    return xhat * g + b, (xhat, inv)


def attn_refine(query_feat, support_feats, query_pos, support_pos, params: AttnInterpParams,
                _cache: list | None = None) -> np.ndarray:
    """Refine query features by cross-attention over their 4 supports.

    Batched: ``query_feat (Q, C)``, ``support_feats (Q, 4, C)``,
    ``query_pos (Q, 2)``, ``support_pos (Q, 4, 2)``; a single query may be
    passed without the leading axis.
    """
    x = np.asarray(query_feat, dtype=np.float64)
    single = x.ndim == 1
    S = np.asarray(support_feats, dtype=np.float64)
    qp = np.asarray(query_pos, dtype=np.float64)
    sp = np.asarray(support_pos, dtype=np.float64)
    if single:
        x, S, qp, sp = x[None], S[None], qp[None], sp[None]
    dist = np.abs(sp - qp[:, None, :]).sum(-1)  # (Q, J) L1
    bias = params.slopes[None, :, None] * dist[:, None, :]  # (Q, H, J)
    for blk in params.blocks:
        dh = blk.wq.shape[1]
        q = np.einsum("qc,hdc->qhd", x, blk.wq)
        k = np.einsum("qjc,hdc->qjhd", S, blk.wk)
        v = np.einsum("qjc,hdc->qjhd", S, blk.wv)
        a = _softmax(np.einsum("qhd,qjhd->qhj", q, k) / np.sqrt(dh) - bias)
        o = np.einsum("qhj,qjhd->qhd", a, v).reshape(len(x), -1)
        y = x + o @ blk.wo.T
        x_new, ln = _layernorm(y, blk.ln_g, blk.ln_b)
        if _cache is not None:
            _cache.append(dict(x=x, q=q, k=k, v=v, a=a, o=o, ln=ln, dist=dist))
        x = x_new
    return x[0] if single else x


def learnable_weights(query_feat, support_feats, query_pos, support_pos, params: AttnInterpParams,
                      _cache: dict | None = None) -> np.ndarray:
    """Softmax blend weights ``(Q, 4)`` from refined query and raw support features."""
    if np.ndim(query_feat) == 1:
        return learnable_weights(np.asarray(query_feat)[None], np.asarray(support_feats)[None],
                                 np.asarray(query_pos)[None], np.asarray(support_pos)[None], params, _cache)[0]
    blocks = [] if _cache is not None else None
    xr = attn_refine(query_feat, support_feats, query_pos, support_pos, params, blocks)
    S = np.asarray(support_feats, dtype=np.float64)
    qs = xr @ params.score_q.T
    ks = np.einsum("qjc,dc->qjd", S, params.score_k)
    w = _softmax(np.einsum("qd,qjd->qj", qs, ks))
    if _cache is not None:
        _cache.update(blocks=blocks, xr=xr, qs=qs, ks=ks, w=w, S=S)
    return w


def blend(weights, support_motion) -> np.ndarray:
    """``(Q, 4)`` weights x ``(T, Q, 4, F)`` motions -> ``(T, Q, F)``."""
    return np.einsum("qj,tqjf->tqf", weights, support_motion)


def interp_learnable_points(query_feat, query_pos, support_feat, support_pos, support_motion,
                            params: AttnInterpParams) -> tuple[np.ndarray, np.ndarray]:
    w = learnable_weights(query_feat, support_feat, query_pos, support_pos, params)
    return blend(w, support_motion), w


def learnable_backward(query_feat, query_pos, support_feat, support_pos, support_motion,
                       params: AttnInterpParams, upstream) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of ``<upstream, blend(...)>``.

    Returns ``(param_grads, d_support_motion)`` where ``param_grads`` is keyed
    like :meth:`AttnInterpParams.arrays`.
    """
    cache: dict = {}
    w = learnable_weights(query_feat, support_feat, query_pos, support_pos, params, cache)
    M = np.asarray(support_motion, dtype=np.float64)
    G = np.asarray(upstream, dtype=np.float64)
    d_motion = w[None, :, :, None] * G[:, :, None, :]
    dw = np.einsum("tqf,tqjf->qj", G, M)
    dlog = w * (dw - (w * dw).sum(-1, keepdims=True))
    qs, ks, S, xr = cache["qs"], cache["ks"], cache["S"], cache["xr"]
    dqs = np.einsum("qj,qjd->qd", dlog, ks)
    dks = dlog[:, :, None] * qs[:, None, :]
    grads = {
        "score_q": dqs.T @ xr,
        "score_k": np.einsum("qjd,qjc->dc", dks, S),
        "slopes": np.zeros_like(params.slopes),
    }
    dx = dqs @ params.score_q
    for i in reversed(range(len(params.blocks))):
        blk = params.blocks[i]
        c = cache["blocks"][i]
        dh = blk.wq.shape[1]
        xhat, inv = c["ln"]
        grads[f"block{i}.ln_g"] = (dx * xhat).sum(0)
        grads[f"block{i}.ln_b"] = dx.sum(0)
        dxh = dx * blk.ln_g
        dy = inv * (dxh - dxh.mean(-1, keepdims=True) - xhat * (dxh * xhat).mean(-1, keepdims=True))
        grads[f"block{i}.wo"] = dy.T @ c["o"]
        do = (dy @ blk.wo).reshape(c["q"].shape)
        a, q, k, v = c["a"], c["q"], c["k"], c["v"]
        da = np.einsum("qhd,qjhd->qhj", do, v)
        dv = np.einsum("qhj,qhd->qjhd", a, do)
        dl = a * (da - (a * da).sum(-1, keepdims=True))
        grads["slopes"] = grads["slopes"] - np.einsum("qhj,qj->h", dl, c["dist"])
        dq = np.einsum("qhj,qjhd->qhd", dl, k) / np.sqrt(dh)
        dk = np.einsum("qhj,qhd->qjhd", dl, q) / np.sqrt(dh)
        grads[f"block{i}.wq"] = np.einsum("qhd,qc->hdc", dq, c["x"])
        grads[f"block{i}.wk"] = np.einsum("qjhd,qjc->hdc", dk, S)
        grads[f"block{i}.wv"] = np.einsum("qjhd,qjc->hdc", dv, S)
        dx = dy + np.einsum("qhd,hdc->qc", dq, blk.wq)
    return grads, d_motion


# -- grid-level wrappers --------------------------------------------------------


def _grid_inputs(feat_map, sample_set, motions):
    rows, cols = sample_set.grid_shape
    F = np.asarray(feat_map, dtype=np.float64).reshape(rows * cols, -1)
    qi = sample_set.query_ids
    nb = sample_set.neighbor_map
    qpos = np.stack([qi % cols, qi // cols], axis=1).astype(np.float64)
    spos = np.stack([nb % cols, nb // cols], axis=-1).astype(np.float64)
    M = np.asarray(motions, dtype=np.float64)[:, nb]  # (T, Q, 4, F)
    return F[qi], qpos, F[nb], spos, M


def interp_learnable(feat_map, sample_set, motions, params: AttnInterpParams):
    """Interpolate query motions of a :class:`SampleSet` grid.

    ``feat_map`` is the ``(rows, cols, C)`` query-frame feature map and
    ``motions`` a ``(T, rows * cols, F)`` array indexed by grid id (only
    tracked entries are read). Distances are in grid cells. Returns
    ``(T, Q, F)`` motions and ``(Q, 4)`` weights.
    """
    qf, qp, sf, sp, M = _grid_inputs(feat_map, sample_set, motions)
    return interp_learnable_points(qf, qp, sf, sp, M, params)


def interp_learnable_grad(feat_map, sample_set, motions, params: AttnInterpParams, upstream):
    """Parameter gradients and ``(T, rows * cols, F)`` motion gradients."""
    qf, qp, sf, sp, M = _grid_inputs(feat_map, sample_set, motions)
    grads, dM = learnable_backward(qf, qp, sf, sp, M, params, upstream)
    d_motions = np.zeros(np.shape(motions))
    np.add.at(d_motions, (slice(None), sample_set.neighbor_map), dM)
    return grads, d_motions
