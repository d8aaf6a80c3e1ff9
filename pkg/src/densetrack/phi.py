"""Toy refinement transformer with joint global-local spatial attention.

Each layer runs, with pre-norm residuals:

1. temporal self-attention among the T tokens of one trajectory;
2. spatial attention per frame, where a token attends jointly to the
   anchor tracks (a stride-``a`` subset of the tracked grid) and to the
   non-anchor tracks inside its ``window x window`` neighbourhood;
3. a ReLU feedforward.

A pointwise head maps the final tokens to ``(du, dv, dd, do_logit)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blobs import f32

LN_EPS = 1e-5
_CHUNK = 512


def layernorm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def _softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


_LAYER_FIELDS = (
    "ln1_g", "ln1_b", "t_wq", "t_wk", "t_wv", "t_wo",
    "ln2_g", "ln2_b", "s_wq", "s_wk", "s_wv", "s_wo",
    "ln3_g", "ln3_b", "ff_w1", "ff_b1", "ff_w2", "ff_b2",
)


@dataclass(frozen=True)
class PhiWeights:
    layers: tuple[dict, ...]  # each keyed by _LAYER_FIELDS; matrices act as x @ W
    head_g: np.ndarray
    head_b: np.ndarray
    head_w: np.ndarray  # (D, 4)
    head_bias: np.ndarray  # (4,)
    n_heads: int = 4
    anchor_stride: int = 4
    window: int = 7

    def __post_init__(self):
        D = self.D
        if D % self.n_heads:
            raise ValueError(f"width {D} not divisible by {self.n_heads} heads")
        if self.window % 2 == 0 or self.anchor_stride < 1:
            raise ValueError("window must be odd and anchor_stride positive")
        for layer in self.layers:
            if set(layer) != set(_LAYER_FIELDS):
                raise ValueError("layer parameters incomplete")
            if layer["t_wq"].shape != (D, D) or layer["s_wq"].shape != (D, D):
                raise ValueError("attention projections must be D x D")
        for a in self.arrays().values():
            if not np.all(np.isfinite(a)):
                raise ValueError("phi weights must be finite")

    @property
    def D(self) -> int:
        return self.head_w.shape[0]

    @classmethod
    def random(cls, seed: int = 0, D: int = 128, n_layers: int = 3, n_heads: int = 4,
               anchor_stride: int = 4, window: int = 7, head_scale: float = 0.01) -> "PhiWeights":
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(D)
        layers = []
        for _ in range(n_layers):
            p = {}
            for n in ("ln1", "ln2", "ln3"):
                p[n + "_g"] = f32(1.0 + rng.normal(0, 0.02, D))
                p[n + "_b"] = f32(rng.normal(0, 0.02, D))
            for n in ("t_wq", "t_wk", "t_wv", "t_wo", "s_wq", "s_wk", "s_wv", "s_wo"):
                p[n] = f32(rng.normal(0, s, (D, D)))
            p["ff_w1"] = f32(rng.normal(0, s, (D, 2 * D)))
            p["ff_b1"] = f32(rng.normal(0, 0.02, 2 * D))
            p["ff_w2"] = f32(rng.normal(0, 1.0 / np.sqrt(2 * D), (2 * D, D)))
            p["ff_b2"] = f32(rng.normal(0, 0.02, D))
            layers.append(p)
        return cls(
            tuple(layers),
            f32(np.ones(D)),
            f32(np.zeros(D)),
            f32(rng.normal(0, head_scale, (D, 4))),
            f32(np.zeros(4)),
            n_heads,
            anchor_stride,
            window,
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for n in _LAYER_FIELDS:
                out[f"layer{i}.{n}"] = layer[n]
        out.update(head_g=self.head_g, head_b=self.head_b, head_w=self.head_w, head_bias=self.head_bias)
        return out

    def meta(self) -> dict:
        return {"n_heads": self.n_heads, "anchor_stride": self.anchor_stride, "window": self.window,
                "n_layers": len(self.layers)}

    @classmethod
    def from_arrays(cls, arrays: dict, meta: dict) -> "PhiWeights":
        layers = tuple(
            {n: np.asarray(arrays[f"layer{i}.{n}"], dtype=np.float64) for n in _LAYER_FIELDS}
            for i in range(int(meta["n_layers"]))
        )
        return cls(layers, arrays["head_g"], arrays["head_b"], arrays["head_w"], arrays["head_bias"],
                   int(meta["n_heads"]), int(meta["anchor_stride"]), int(meta["window"]))


@dataclass(frozen=True)
class SpatialContext:
    anchors: np.ndarray  # (A,) indices into the tracked set
    local: np.ndarray  # (N, L) indices, -1 padded; anchors excluded


def spatial_context(cells, grid_shape, spacing: int, anchor_stride: int, window: int) -> SpatialContext:
    """Anchor subset and local neighbourhoods for tracked cells ``(N, 2)`` as (row, col).

    On a complete subgrid the anchors are its stride-``anchor_stride``
    subgrid; otherwise every ``anchor_stride**2``-th tracked point. The local
    window spans ``window // 2 * spacing`` grid cells each way.
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    N = len(cells)
    ur = np.unique(cells[:, 0])
    uc = np.unique(cells[:, 1])
    if len(ur) * len(uc) == N:
        keep = np.isin(cells[:, 0], ur[::anchor_stride]) & np.isin(cells[:, 1], uc[::anchor_stride])
        anchors = np.flatnonzero(keep)
    else:
        anchors = np.sort(np.argsort(cells[:, 0] * grid_shape[1] + cells[:, 1], kind="stable")[::anchor_stride ** 2])
    rows, cols = grid_shape
    index = np.full((rows, cols), -1, dtype=np.int64)
    index[cells[:, 0], cells[:, 1]] = np.arange(N)
    is_anchor = np.zeros(N, dtype=bool)
    is_anchor[anchors] = True
    h = (window // 2) * spacing
    off = np.arange(-h, h + 1)
    rr = cells[:, 0:1, None] + off[None, :, None]
    cc = cells[:, 1:2, None] + off[None, None, :]
    inside = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    cand = np.where(inside, index[np.clip(rr, 0, rows - 1), np.clip(cc, 0, cols - 1)], -1).reshape(N, -1)
    cand = np.where((cand >= 0) & ~is_anchor[np.maximum(cand, 0)], cand, -1)
    # compact each row, preserving row-major order
    order = np.argsort(cand < 0, axis=1, kind="stable")
    cand = np.take_along_axis(cand, order, axis=1)
    width = max(1, int((cand >= 0).sum(1).max(initial=0)))
    return SpatialContext(anchors, cand[:, :width])


def _heads(x, H):
    return x.reshape(x.shape[:-1] + (H, x.shape[-1] // H))


def _temporal_attn(h, p, H):
    T, N, D = h.shape
    dh = D // H
    # (N, H, T, dh) so the score and mixing products are batched matmuls
    q, k, v = (_heads(h @ p[n], H).transpose(1, 2, 0, 3) for n in ("t_wq", "t_wk", "t_wv"))
    a = _softmax(q @ k.swapaxes(-1, -2) / np.sqrt(dh))
    o = (a @ v).transpose(2, 0, 1, 3).reshape(T, N, D)
    return o @ p["t_wo"]


def _spatial_attn(h, p, H, ctx: SpatialContext):
    T, N, D = h.shape
    dh = D // H
    B = T * H
    # token-major (N, T*H, dh) for the gathered local window, batch-major (T*H, N, dh) for anchors
    q, k, v = (np.ascontiguousarray(_heads(h @ p[n], H).transpose(1, 0, 2, 3).reshape(N, B, dh))
               for n in ("s_wq", "s_wk", "s_wv"))
    q /= np.sqrt(dh)
    kaT = k[ctx.anchors].transpose(1, 2, 0)  # (B, dh, A)
    va = v[ctx.anchors].transpose(1, 0, 2)  # (B, A, dh)
    A = len(ctx.anchors)
    L = ctx.local.shape[1]
    out = np.empty((N, B, dh))
    for s in range(0, N, _CHUNK):
        e = min(N, s + _CHUNK)
        loc = ctx.local[s:e]
        li = np.maximum(loc, 0)
        qs = q[s:e]
        logits = np.empty((e - s, B, A + L))
        logits[..., :A] = (qs.transpose(1, 0, 2) @ kaT).transpose(1, 0, 2)
        for j in range(L):
            logits[..., A + j] = np.einsum("nbd,nbd->nb", qs, k[li[:, j]])
        logits[..., A:] = np.where((loc >= 0)[:, None, :], logits[..., A:], -np.inf)
        a = _softmax(logits)
        o = (a[..., :A].transpose(1, 0, 2) @ va).transpose(1, 0, 2)
        for j in range(L):
            o += a[..., A + j, None] * v[li[:, j]]
        out[s:e] = o
    return out.reshape(N, T, H, dh).transpose(1, 0, 2, 3).reshape(T, N, D) @ p["s_wo"]


def phi_forward(tokens, w: PhiWeights, ctx: SpatialContext) -> np.ndarray:
    """``(T, N, D)`` tokens -> ``(T, N, 4)`` updates ``(du, dv, dd, do_logit)``."""
    x = np.array(tokens, dtype=np.float64)
    if x.shape[-1] != w.D:
        raise ValueError(f"token width {x.shape[-1]} != transformer width {w.D}")
    H = w.n_heads
    for p in w.layers:
        x = x + _temporal_attn(layernorm(x, p["ln1_g"], p["ln1_b"]), p, H)
        x = x + _spatial_attn(layernorm(x, p["ln2_g"], p["ln2_b"]), p, H, ctx)
        h = layernorm(x, p["ln3_g"], p["ln3_b"])
        x = x + np.maximum(h @ p["ff_w1"] + p["ff_b1"], 0.0) @ p["ff_w2"] + p["ff_b2"]
    return layernorm(x, w.head_g, w.head_b) @ w.head_w + w.head_bias
