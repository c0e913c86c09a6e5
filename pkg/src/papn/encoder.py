"""Linear embeddings, the proximity-attention layer and the transformer encoder.

All layers accept arbitrary leading (batch, time) axes: node tensors are
``[..., N, D]``, edge tensors ``[..., N, N, D]``. An optional ``node_mask``
of shape ``[..., N]`` (1 for real nodes) keeps padded nodes out of every
attention softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .layers import ConfigError, LayerNorm, Linear, Module, xavier_uniform


class Embedding(Module):
    """Projects node, edge and mask streams into one hidden size."""

    def __init__(self, rng: np.random.Generator, nf: int, ef: int, hidden: int):
        self.nf, self.ef, self.hidden = nf, ef, hidden
        self.node_proj = Linear(rng, nf, hidden)
        self.edge_proj = Linear(rng, ef, hidden)
        self.mask_proj = Linear(rng, 1, hidden)

    def __call__(self, node_features, edge_features, masks):
        node_features = np.asarray(node_features, dtype=np.float64)
        edge_features = np.asarray(edge_features, dtype=np.float64)
        if node_features.shape[-1] != self.nf or edge_features.shape[-1] != self.ef:
            raise ConfigError(
                f"embedding built for nf={self.nf}, ef={self.ef}; got node features "
                f"{node_features.shape} and edge features {edge_features.shape}")
        masks = np.asarray(masks, dtype=np.float64)[..., None]
        return self.node_proj(node_features), self.edge_proj(edge_features), self.mask_proj(masks)


def topk_mask(scores: np.ndarray, k: int, node_mask: np.ndarray | None = None) -> np.ndarray:
    """Multi-hot of the ``k`` highest scores per row among real nodes.

    Each row keeps ``min(k, real nodes)`` ones; ties go to the lower index.
    """
    if k < 1:
        raise ConfigError(f"top-k cutoff must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    if node_mask is not None:
        scores = np.where(np.broadcast_to(node_mask, scores.shape) > 0, scores, -np.inf)
    order = np.argsort(-scores, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(scores.shape[-1]), axis=-1)
    keep = (ranks < k) & np.isfinite(scores)
    return keep.astype(np.float64)


@dataclass
class ProximityOutput:
    nodes: Tensor             # [..., N, D] residually updated node embeddings
    mask_attention: Tensor    # [..., N, D] mask embedding plus normalised filtered attention
    alpha: Tensor             # [..., N_i, N_j, H] attention weights
    log_alpha: Tensor         # log of ``alpha``; -inf on padded targets
    filtered: Tensor          # [..., N, D] re-embedded mask attention after top-k
    topk: np.ndarray          # [..., N] multi-hot


class ProximityAttention(Module):
    """Multi-head additive attention over node, edge and mask embeddings."""

    def __init__(self, rng: np.random.Generator, hidden: int, heads: int, topk: int = 10,
                 slope: float = 0.01):
        if hidden % heads:
            raise ConfigError(f"heads ({heads}) must divide hidden size ({hidden})")
        if topk < 1:
            raise ConfigError(f"top-k cutoff must be >= 1, got {topk}")
        self.hidden, self.heads, self.k, self.slope = hidden, heads, topk, slope
        dh = hidden // heads
        self.W = Linear(rng, hidden, hidden, bias=False)
        self.W_e = Linear(rng, hidden, hidden, bias=False)
        self.W_m = Linear(rng, hidden, hidden, bias=False)
        self.W_v = Linear(rng, hidden, hidden, bias=False)
        # one scoring vector per head and per term of the additive score
        self.a_src = xavier_uniform(rng, dh, 1, (heads, dh))
        self.a_dst = xavier_uniform(rng, dh, 1, (heads, dh))
        self.a_edge = xavier_uniform(rng, dh, 1, (heads, dh))
        self.a_mask_src = xavier_uniform(rng, dh, 1, (heads, dh))
        self.a_mask_dst = xavier_uniform(rng, dh, 1, (heads, dh))
        self.att_proj = Linear(rng, heads, hidden)

    def _heads(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[:-1] + (self.heads, self.hidden // self.heads))

    def __call__(self, X, E, M, node_mask=None) -> ProximityOutput:
        X, E, M = ad.as_tensor(X), ad.as_tensor(E), ad.as_tensor(M)
        n = X.shape[-2]
        if E.shape[-3:-1] != (n, n) or M.shape[-2] != n:
            raise ConfigError(f"inconsistent node counts: {X.shape}, {E.shape}, {M.shape}")
        Xh = self._heads(self.W(X))
        Eh = self._heads(self.W_e(E))
        Mh = self._heads(self.W_m(M))

        src = ad.tsum(Xh * self.a_src, -1) + ad.tsum(Mh * self.a_mask_src, -1)   # [..., N, H]
        dst = ad.tsum(Xh * self.a_dst, -1) + ad.tsum(Mh * self.a_mask_dst, -1)
        edge = ad.tsum(Eh * self.a_edge, -1)                                      # [..., N, N, H]
        score = ad.leaky_relu(edge + ad.expand_dims(src, -2) + ad.expand_dims(dst, -3), self.slope)
        if node_mask is not None:
            score = ad.masked_fill(score, np.asarray(node_mask)[..., None, :, None], NEG_INF)
        alpha = ad.softmax(score, axis=-2)
        log_alpha = ad.log_softmax(score, axis=-2)

        V = self._heads(self.W_v(X))                                   # [..., N, H, dh]
        a_h = ad.transpose(alpha, _move_last_to(-3, alpha.ndim))       # [..., H, Ni, Nj]
        v_h = ad.swapaxes(V, -3, -2)                                   # [..., H, Nj, dh]
        agg = ad.swapaxes(ad.matmul(a_h, v_h), -3, -2)                 # [..., Ni, H, dh]
        nodes = X + agg.reshape(X.shape)

        # attention mass each node receives, per head
        weights = alpha
        if node_mask is not None:
            weights = alpha * np.asarray(node_mask)[..., :, None, None]
        received = ad.tsum(weights, axis=-3)                           # [..., Nj, H]
        keep = topk_mask(received.data.sum(axis=-1), self.k, node_mask)
        m_att = self.att_proj(received)
        filtered = m_att * keep[..., None]
        normed = ad.softmax(ad.masked_fill(filtered, keep[..., None], NEG_INF), axis=-2)
        return ProximityOutput(nodes, M + normed, alpha, log_alpha, filtered, keep)


def _move_last_to(pos: int, ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    last = axes.pop()
    axes.insert(pos % ndim, last)
    return tuple(axes)


def masked_norm(x: Tensor, norm: LayerNorm, axis_mode: str, node_mask=None) -> Tensor:
    """Layer norm over features, or over every non-feature axis (``batch`` mode)."""
    if axis_mode == "feature":
        return norm(x)
    if axis_mode != "batch":
        raise ConfigError(f"norm_axis must be 'feature' or 'batch', got {axis_mode!r}")
    axes = tuple(range(x.ndim - 1))
    w = np.ones(x.shape[:-1] + (1,)) if node_mask is None else np.asarray(node_mask)[..., None]
    w = np.broadcast_to(w, x.shape[:-1] + (1,))
    count = w.sum()
    mu = ad.tsum(x * w, axes, keepdims=True) * (1.0 / count)
    xc = x - mu
    var = ad.tsum(xc * xc * w, axes, keepdims=True) * (1.0 / count)
    return xc / ad.sqrt(var + norm.eps) * norm.gamma + norm.beta


class EncoderLayer(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, heads: int, ffn_mult: int = 4):
        self.hidden, self.heads = hidden, heads
        self.W_q = Linear(rng, hidden, hidden, bias=False)
        self.W_k = Linear(rng, hidden, hidden, bias=False)
        self.W_v = Linear(rng, hidden, hidden, bias=False)
        self.W_o = Linear(rng, hidden, hidden)
        self.ffn1 = Linear(rng, hidden, ffn_mult * hidden)
        self.ffn2 = Linear(rng, ffn_mult * hidden, hidden)
        self.norm1 = LayerNorm(hidden)
        self.norm2 = LayerNorm(hidden)

    def attention(self, x: Tensor, node_mask=None) -> tuple[Tensor, Tensor]:
        dh = self.hidden // self.heads

        def split(t):  # [..., N, D] -> [..., H, N, dh]
            return ad.swapaxes(t.reshape(t.shape[:-1] + (self.heads, dh)), -3, -2)

        q, k, v = split(self.W_q(x)), split(self.W_k(x)), split(self.W_v(x))
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        if node_mask is not None:
            scores = ad.masked_fill(scores, np.asarray(node_mask)[..., None, None, :], NEG_INF)
        weights = ad.softmax(scores, axis=-1)
        out = ad.swapaxes(ad.matmul(weights, v), -3, -2)
        return self.W_o(out.reshape(x.shape)), weights

    def __call__(self, x: Tensor, node_mask=None, norm_axis: str = "feature") -> Tensor:
        att, _ = self.attention(x, node_mask)
        x = masked_norm(x + att, self.norm1, norm_axis, node_mask)
        ff = self.ffn2(ad.relu(self.ffn1(x)))
        return masked_norm(x + ff, self.norm2, norm_axis, node_mask)


class TransformerEncoder(Module):
    """Input projection followed by post-norm self-attention layers."""

    def __init__(self, rng: np.random.Generator, hidden: int, heads: int, layers: int = 2,
                 ffn_mult: int = 4, norm_axis: str = "feature"):
        if hidden % heads:
            raise ConfigError(f"heads ({heads}) must divide hidden size ({hidden})")
        self.norm_axis = norm_axis
        self.in_proj = Linear(rng, hidden, hidden)
        self.layers = [EncoderLayer(rng, hidden, heads, ffn_mult) for _ in range(layers)]

    def __call__(self, x, node_mask=None) -> Tensor:
        x = self.in_proj(ad.as_tensor(x))
        for layer in self.layers:
            x = layer(x, node_mask, self.norm_axis)
        return x
